import os

import numpy as np
import pytest
import scipy.linalg

from app.models.imaging import ScanningBasis
from app.models.network import DiscriminatorConfig, ExtractorConfig, GeneratorConfig, TrainConfig


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow desk-scale experiments")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def orthonormal_basis():
    """Full +-1 Hadamard basis scaled by 1/sqrt(N): rows are orthonormal."""

    def build(n: int) -> ScanningBasis:
        return ScanningBasis(rows=scipy.linalg.hadamard(n) / np.sqrt(n), seed=None)

    return build


@pytest.fixture(autouse=True)
def isolated_env(monkeypatch, tmp_path):
    """Keep SPI_* variables and stray .env files out of every test."""
    for key in list(os.environ):
        if key.startswith("SPI_"):
            monkeypatch.delenv(key)
    monkeypatch.chdir(tmp_path)


@pytest.fixture
def tiny_train_config():
    """F=4 / B=1 refiner on 8x8 images with a 4-channel, 2-layer extractor."""

    def build(**overrides) -> TrainConfig:
        values = dict(
            learning_rate=1e-3,
            batch_size=4,
            epochs=1,
            seed=0,
            dtype="float64",
            generator=GeneratorConfig(features=4, blocks=1, height=8, width=8),
            discriminator=DiscriminatorConfig(channels=4, stages=2, hidden=8),
            extractor=ExtractorConfig(layer=2, width_divisor=16),
        )
        values.update(overrides)
        return TrainConfig(**values)

    return build
