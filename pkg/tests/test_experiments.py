import json

import numpy as np
import pytest

from app.config.settings import Settings, SolverSettings, TrainSettings
from app.dataset import synthetic_images, write_synthetic_dataset
from app.errors import CheckpointError, InvalidArgumentError
from app.experiments import ExperimentManager
from app.information import REPORT_COLUMNS
from app.linear_recovery import l2_reconstruct
from app.metrics import PSNR_CAP_DB, psnr
from app.models.experiment import DatasetSplits, SweepSpec, TimingModel
from app.models.imaging import Image
from app.models.network import ExtractorConfig, GeneratorConfig
from app.models.recovery import SparsifyingBasis
from app.networks import FeatureExtractor, save_extractor_weights
from app.report import ReportWriter, read_report
from app.spi_core import acquire, image_rng, sigma_from_noise_level
from app.trainer import GanTrainer


def _manager(tmp_path, **settings) -> ExperimentManager:
    return ExperimentManager(
        Settings(**settings),
        SolverSettings(max_iters=50, ista_max_iters=50),
        TrainSettings(),
        out_dir=tmp_path,
    )


def _splits(size: int = 16, test: int = 3) -> DatasetSplits:
    images = synthetic_images(test + 2, size, seed=11)
    return DatasetSplits(train=images[:1], val=images[1:2], test=images[2:])


def test_timing_model_follows_the_modulator_rate():
    timing = TimingModel(method="l2", k=614, n=4096, reconstruction_seconds=0.002)
    assert timing.acquisition_seconds == pytest.approx(0.0307)
    assert abs(timing.acquisition_seconds - 0.03) <= 0.05 * 0.03
    assert timing.fps * timing.total_seconds == pytest.approx(1.0, abs=1e-9)
    faster = TimingModel(method="l2", k=614, n=4096, dmd_rate=40000.0, reconstruction_seconds=0.002)
    assert faster.acquisition_seconds == pytest.approx(timing.acquisition_seconds / 2)
    assert timing.sr == pytest.approx(614 / 4096)


def test_full_sampling_l2_sweep_hits_the_cap(tmp_path):
    manager = _manager(tmp_path)
    spec = SweepSpec(sampling_rates=[1.0], noise_levels=[0.0], methods=["l2"])
    rows = read_report(manager.run_sweep(_splits(), spec))
    assert len(rows) == 1
    assert float(rows[0]["mean_psnr"]) == PSNR_CAP_DB
    assert float(rows[0]["mean_ssim"]) == pytest.approx(1.0, abs=1e-6)
    assert rows[0]["extractor_mode"] == "none"


def test_sweep_covers_every_cell(tmp_path):
    spec = SweepSpec(sampling_rates=[0.25, 0.5], noise_levels=[0.0, 1e-3], methods=["l2", "dgi"], seeds=[0, 1])
    path = _manager(tmp_path).run_sweep(_splits(), spec)
    rows = read_report(path)
    assert len(rows) == 16
    assert list(rows[0]) == REPORT_COLUMNS
    cells = {(r["method"], r["sr"], r["noise_level"], r["seed"]) for r in rows}
    assert len(cells) == 16
    assert len(path.with_suffix(".jsonl").read_text().splitlines()) == 16 * 3


def test_sweep_rows_aggregate_per_image_scores(tmp_path):
    manager = _manager(tmp_path)
    splits = _splits()
    spec = SweepSpec(sampling_rates=[0.25], noise_levels=[1e-3], methods=["l2"], seeds=[5])
    row = read_report(manager.run_sweep(splits, spec))[0]

    phi = manager.basis(0.25, 256, 5)
    psi = SparsifyingBasis(kind="identity", height=16, width=16)
    sigma = sigma_from_noise_level(1e-3, 256)
    scores = []
    for index, x in enumerate(splits.test):
        y = acquire(Image.from_array(x), phi, sigma, image_rng(5, index))
        scores.append(psnr(x, l2_reconstruct(phi, psi, y)))
    assert float(row["mean_psnr"]) == pytest.approx(np.mean(scores), abs=1e-9)
    assert float(row["std_psnr"]) == pytest.approx(np.std(scores), abs=1e-9)
    assert int(row["n"]) == 3


def test_sweep_output_is_reproducible(tmp_path):
    spec = SweepSpec(sampling_rates=[0.1, 0.3], noise_levels=[0.0, 5e-3], methods=["l2", "cgd", "ap"])
    first = _manager(tmp_path).run_sweep(_splits(), spec, csv_path=tmp_path / "a.csv")
    second = _manager(tmp_path).run_sweep(_splits(), spec, csv_path=tmp_path / "b.csv")
    threaded = _manager(tmp_path, workers=2).run_sweep(_splits(), spec, csv_path=tmp_path / "c.csv")
    assert first.read_bytes() == second.read_bytes()
    assert first.read_bytes() == threaded.read_bytes()


def test_sweep_rejects_unknown_methods(tmp_path):
    with pytest.raises(InvalidArgumentError):
        _manager(tmp_path).run_sweep(_splits(), SweepSpec(methods=["l2", "magic"]))


def test_gan_needs_a_checkpoint(tmp_path):
    manager = _manager(tmp_path)
    with pytest.raises(CheckpointError):
        manager.reconstructor(manager.basis(0.25, 256, 0), "gan", (16, 16))


def test_frames_reconstruct_identically_in_order(tmp_path):
    frame_dir = tmp_path / "frames"
    write_synthetic_dataset(frame_dir, 4, 16, seed=2)
    manager = _manager(tmp_path)
    phi = manager.basis(0.25, 256, 0)
    first = manager.reconstruct_frames(frame_dir, phi, "l2")
    second = manager.reconstruct_frames(frame_dir, phi, "l2")
    assert first.names == sorted(first.names)
    assert len(first.frames) == 4
    for a, b in zip(first.frames, second.frames):
        np.testing.assert_array_equal(a, b)


def test_generalization_eval_resizes_the_directory(tmp_path):
    data_dir = tmp_path / "other"
    write_synthetic_dataset(data_dir, 3, 32, seed=9)
    manager = _manager(tmp_path)
    with ReportWriter(tmp_path / "eval.csv", REPORT_COLUMNS, tmp_path / "eval.jsonl") as writer:
        row = manager.evaluate(data_dir, manager.basis(0.5, 256, 0), "l2", writer=writer)
    assert row.n == 3
    assert len((tmp_path / "eval.jsonl").read_text().splitlines()) == 3


def test_benchmark_reports_positive_median(tmp_path):
    manager = _manager(tmp_path)
    timing = manager.benchmark_timing(manager.basis(0.15, 256, 0), "cgd", n_frames=3)
    assert timing.k == 38 and timing.n == 256
    assert timing.reconstruction_seconds > 0.0
    assert timing.fps > 0.0
    with pytest.raises(InvalidArgumentError):
        manager.benchmark_timing(manager.basis(0.15, 256, 0), "cgd", n_frames=0)


def _curve(rows, method, seed, key):
    picked = [r for r in rows if r["method"] == method and r["seed"] == str(seed)]
    return [float(r["mean_psnr"]) for r in sorted(picked, key=lambda r: float(r[key]))]


@pytest.mark.slow
@pytest.mark.parametrize("method", ["l2", "cgd"])
def test_quality_grows_with_rate_and_falls_with_noise(tmp_path, method):
    manager = ExperimentManager(Settings(), SolverSettings(), TrainSettings(), out_dir=tmp_path)
    images = synthetic_images(100, 32, seed=21)
    splits = DatasetSplits(train=images[:1], val=images[:1], test=images)
    seeds = [0, 1, 2]

    by_rate = SweepSpec(sampling_rates=[0.05, 0.10, 0.20, 0.30], noise_levels=[0.0], methods=[method], seeds=seeds)
    rows = read_report(manager.run_sweep(splits, by_rate, csv_path=tmp_path / "rates.csv"))
    for seed in seeds:
        means = _curve(rows, method, seed, "sr")
        assert all(after > before for before, after in zip(means, means[1:]))

    by_noise = SweepSpec(sampling_rates=[0.20], noise_levels=[1e-4, 1e-3, 2e-2], methods=[method], seeds=seeds)
    rows = read_report(manager.run_sweep(splits, by_noise, csv_path=tmp_path / "levels.csv"))
    for seed in seeds:
        means = _curve(rows, method, seed, "noise_level")
        assert all(after < before for before, after in zip(means, means[1:]))


def test_gan_rows_report_the_checkpoint_extractor(tmp_path, tiny_train_config):
    weights = save_extractor_weights(
        FeatureExtractor(ExtractorConfig(layer=2, width_divisor=16)), tmp_path / "features.spiw"
    )
    cfg = tiny_train_config(
        generator=GeneratorConfig(features=4, blocks=1, height=16, width=16),
        extractor=ExtractorConfig(layer=2, width_divisor=16, source="file", path=str(weights)),
    )
    checkpoint = GanTrainer(cfg).checkpoint()
    manager = _manager(tmp_path)
    assert manager.settings.extractor == "random"

    spec = SweepSpec(sampling_rates=[0.25], noise_levels=[0.0], methods=["l2", "gan"], seeds=[0])
    rows = read_report(manager.run_sweep(_splits(), spec, checkpoints={(0.25, 0): checkpoint}))
    modes = {row["method"]: row["extractor_mode"] for row in rows}
    assert modes == {"l2": "none", "gan": "file"}

    data_dir = tmp_path / "other"
    write_synthetic_dataset(data_dir, 2, 16, seed=3)
    row = manager.evaluate(data_dir, manager.basis(0.25, 256, 0), "gan", checkpoint=checkpoint)
    assert row.extractor_mode == "file"


def test_quality_lines_record_the_clipped_share(tmp_path):
    manager = _manager(tmp_path)
    splits = _splits()
    spec = SweepSpec(sampling_rates=[0.1], noise_levels=[0.0], methods=["l2", "dgi"], seeds=[0])
    path = manager.run_sweep(splits, spec)
    records = [json.loads(line) for line in path.with_suffix(".jsonl").read_text().splitlines()]

    phi = manager.basis(0.1, 256, 0)
    recon = manager.reconstructor(phi, "l2", (16, 16))
    expected = [
        recon.reconstruct(acquire(Image.from_array(x), phi, 0.0, image_rng(0, index))).clipped_fraction
        for index, x in enumerate(splits.test)
    ]
    assert [r["clipped_fraction"] for r in records if r["method"] == "l2"] == pytest.approx(expected, abs=1e-12)
    assert all(r["clipped_fraction"] == 0.0 for r in records if r["method"] == "dgi")
