import copy

import numpy as np
import pytest
import torch

from app.config.settings import Settings, SolverSettings, TrainSettings
from app.dataset import synthetic_images
from app.errors import CheckpointError, InvalidArgumentError, NumericalFailureError
from app.experiments import ExperimentManager
from app.information import ABLATION_COLUMNS
from app.linear_recovery import MinNormSolver
from app.losses import total_loss
from app.metrics import psnr
from app.models.experiment import DatasetSplits
from app.models.network import GeneratorConfig
from app.serialization import write_checkpoint_file
from app.spi_core import build_scanning_basis
from app.trainer import (
    CHECKPOINT_NAME,
    TRAIN_LOG_NAME,
    GanTrainer,
    build_generator,
    l2_inputs,
    load_checkpoint,
    save_checkpoint,
)


@pytest.fixture
def images(rng):
    return rng.uniform(size=(4, 8, 8))


@pytest.fixture
def phi():
    return build_scanning_basis(16, 64, seed=0)


def _state(module: torch.nn.Module):
    return {name: value.detach().clone() for name, value in module.state_dict().items()}


def _changed(before, module: torch.nn.Module):
    return [name for name, value in module.state_dict().items() if not torch.equal(before[name], value)]


def _parameter_names(module: torch.nn.Module):
    return {name for name, _ in module.named_parameters()}


def _batches(trainer, images, phi):
    noisy = l2_inputs(images, phi, MinNormSolver(phi.rows), 0.0, 0)
    return trainer.tensor(images), trainer.tensor(noisy)


def test_l2_inputs_are_clipped_estimates(images, phi):
    noisy = l2_inputs(images, phi, MinNormSolver(phi.rows), 0.0, 0)
    assert noisy.shape == images.shape
    assert noisy.min() >= 0.0 and noisy.max() <= 1.0


def test_zero_learning_rate_leaves_networks_unchanged(tiny_train_config, images, phi):
    trainer = GanTrainer(tiny_train_config(learning_rate=0.0, weight_decay=0.0))
    real, noisy = _batches(trainer, images, phi)

    g_before, d_before = _state(trainer.generator), _state(trainer.discriminator)
    trainer.discriminator_step(real, noisy)
    assert _changed(g_before, trainer.generator) == []
    assert not set(_changed(d_before, trainer.discriminator)) & _parameter_names(trainer.discriminator)

    g_before, d_before = _state(trainer.generator), _state(trainer.discriminator)
    trainer.generator_step(real, noisy)
    assert _changed(d_before, trainer.discriminator) == []
    assert not set(_changed(g_before, trainer.generator)) & _parameter_names(trainer.generator)


def test_each_step_leaves_the_other_networks_state_alone(tiny_train_config, images, phi):
    trainer = GanTrainer(tiny_train_config())
    real, noisy = _batches(trainer, images, phi)
    e_before = _state(trainer.extractor)

    g_before, d_before = _state(trainer.generator), _state(trainer.discriminator)
    trainer.discriminator_step(real, noisy)
    assert _changed(g_before, trainer.generator) == []
    assert set(_changed(d_before, trainer.discriminator)) & _parameter_names(trainer.discriminator)
    assert trainer.generator.training

    g_before, d_before = _state(trainer.generator), _state(trainer.discriminator)
    trainer.generator_step(real, noisy)
    assert _changed(d_before, trainer.discriminator) == []
    assert set(_changed(g_before, trainer.generator)) & _parameter_names(trainer.generator)
    assert trainer.discriminator.training
    assert all(p.requires_grad for p in trainer.discriminator.parameters())
    assert all(not p.requires_grad for p in trainer.extractor.parameters())
    assert _changed(e_before, trainer.extractor) == []


def test_fake_batch_does_not_depend_on_the_generator_mode(tiny_train_config, images, phi):
    trainer = GanTrainer(tiny_train_config(learning_rate=0.0, weight_decay=0.0))
    real, noisy = _batches(trainer, images, phi)
    trainer.generator.train()
    in_training = trainer.discriminator_step(real, noisy)
    trainer.generator.eval()
    after_validation = trainer.discriminator_step(real, noisy)
    assert in_training == pytest.approx(after_validation, abs=1e-12)


def test_generator_step_descends_for_a_small_enough_rate(tiny_train_config, images, phi):
    descended = False
    rate = 1e-2
    for _ in range(10):
        cfg = tiny_train_config(optimizer="sgd", momentum=0.0, weight_decay=0.0, learning_rate=rate)
        trainer = GanTrainer(cfg)
        real, noisy = _batches(trainer, images, phi)
        trainer.generator.train()
        trainer.discriminator.eval()
        before = trainer.generator_step(real, noisy).total
        after = total_loss(real, trainer.generator(noisy), trainer.extractor, trainer.discriminator, cfg).total.item()
        if after < before:
            descended = True
            break
        rate /= 2
    assert descended


def test_steps_reject_mismatched_batches(tiny_train_config):
    trainer = GanTrainer(tiny_train_config())
    real = torch.rand(4, 1, 8, 8, dtype=torch.float64)
    with pytest.raises(InvalidArgumentError):
        trainer.generator_step(real, real[:2])
    with pytest.raises(InvalidArgumentError):
        trainer.discriminator_step(real, real[:2])


def test_single_batch_epoch_at_zero_rate_keeps_the_initial_weights(tiny_train_config, images, phi, tmp_path):
    trainer = GanTrainer(tiny_train_config(learning_rate=0.0, weight_decay=0.0))
    reference = copy.deepcopy(trainer.generator)
    d_initial = _state(trainer.discriminator)
    e_initial = _state(trainer.extractor)
    checkpoint = trainer.train(images, phi, out_dir=tmp_path)
    assert len(checkpoint.history) == 1

    # the only generator state that moves is the batch-norm estimate from its one training-mode pass
    reference.train()
    with torch.no_grad():
        reference(_batches(trainer, images, phi)[1])
    for name, value in reference.state_dict().items():
        torch.testing.assert_close(checkpoint.generator_state[name], value, atol=1e-12, rtol=0)
    for name in _parameter_names(trainer.discriminator):
        assert torch.equal(checkpoint.discriminator_state[name], d_initial[name])
    assert _changed(e_initial, trainer.extractor) == []


def test_training_writes_log_and_checkpoint(tiny_train_config, images, phi, tmp_path):
    trainer = GanTrainer(tiny_train_config(epochs=2, checkpoint_every=1))
    trainer.train(images, phi, val_images=images[:2], out_dir=tmp_path)

    lines = (tmp_path / TRAIN_LOG_NAME).read_text().splitlines()
    assert len(lines) == 2
    assert lines[0].startswith("epoch=1 l_mse=")
    assert "val_ssim=nan" in lines[0]

    loaded = load_checkpoint(tmp_path / CHECKPOINT_NAME)
    assert [record.epoch for record in loaded.history] == [1, 2]
    assert loaded.config == trainer.cfg


def test_restored_generator_matches_the_trained_one(tiny_train_config, images, phi, tmp_path):
    trainer = GanTrainer(tiny_train_config(dtype="float32"))
    checkpoint = trainer.train(images, phi)
    path = save_checkpoint(checkpoint, tmp_path / "run.spig")
    generator = build_generator(load_checkpoint(path))
    assert not generator.training

    noisy = l2_inputs(images, phi, MinNormSolver(phi.rows), 0.0, 0)
    with torch.no_grad():
        restored = generator(torch.as_tensor(noisy[:, None], dtype=torch.float32))[:, 0].numpy()
    np.testing.assert_allclose(restored, trainer.refine(noisy), atol=1e-6)
    assert not list(tmp_path.glob("*.tmp"))


def test_checkpoint_layout_must_match(tiny_train_config, images, phi, tmp_path):
    checkpoint = GanTrainer(tiny_train_config()).checkpoint()
    wider = checkpoint.config.model_copy(update={"generator": GeneratorConfig(features=8, blocks=1, height=8, width=8)})
    with pytest.raises(CheckpointError):
        build_generator(checkpoint.model_copy(update={"config": wider}))


def test_checkpoint_with_unknown_blocks_is_rejected(tmp_path):
    path = tmp_path / "odd.spig"
    write_checkpoint_file(path, '{"config": {}, "history": []}', {"optimizer.state": np.zeros(2)})
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_with_malformed_echo_is_rejected(tmp_path):
    path = tmp_path / "bad.spig"
    write_checkpoint_file(path, "not json", {})
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_numerical_failure_keeps_the_last_good_checkpoint(tiny_train_config, images, phi, tmp_path, monkeypatch):
    trainer = GanTrainer(tiny_train_config(epochs=3, checkpoint_every=1))
    original = trainer.generator_step
    calls = []

    def flaky(real, noisy):
        calls.append(1)
        if len(calls) == 2:
            raise NumericalFailureError("generator loss is not finite", layer="generator")
        return original(real, noisy)

    monkeypatch.setattr(trainer, "generator_step", flaky)
    with pytest.raises(NumericalFailureError):
        trainer.train(images, phi, out_dir=tmp_path)

    saved = load_checkpoint(tmp_path / CHECKPOINT_NAME)
    assert [record.epoch for record in saved.history] == [1]


def test_training_rejects_mismatched_pixel_count(tiny_train_config, rng):
    trainer = GanTrainer(tiny_train_config())
    with pytest.raises(InvalidArgumentError):
        trainer.train(rng.uniform(size=(4, 8, 8)), build_scanning_basis(16, 256, seed=0))


def _manager(tmp_path) -> ExperimentManager:
    return ExperimentManager(Settings(), SolverSettings(), TrainSettings(), out_dir=tmp_path)


def test_ablation_compares_both_variants(tiny_train_config, images, phi, tmp_path):
    splits = DatasetSplits(train=images, val=images[:2], test=images[:2])
    rows = _manager(tmp_path).run_ablation(splits, phi, tiny_train_config())
    assert [row["skip_enabled"] for row in rows] == [True, False]
    assert rows[0]["parameters"] == rows[1]["parameters"]
    for row in rows:
        assert set(row) == set(ABLATION_COLUMNS)
        assert not row["numerical_failure"]
        assert np.isfinite(row["final_loss"])
        assert row["mean_ssim_output"] is None


def test_learning_rate_study_records_one_value_per_epoch(tiny_train_config, images, phi, tmp_path):
    splits = DatasetSplits(train=images, val=images[:2], test=images[:2])
    curves = _manager(tmp_path).learning_rate_study(splits, phi, tiny_train_config(epochs=2), [1e-3, 1e-4])
    assert sorted(curves) == [1e-4, 1e-3]
    assert all(len(curve) == 2 for curve in curves.values())


def _desk_scale(tiny_train_config):
    stack = synthetic_images(16, 32, seed=7)
    phi = build_scanning_basis(256, 1024, seed=0)
    cfg = tiny_train_config(
        learning_rate=8e-4,
        batch_size=4,
        epochs=200,
        dtype="float32",
        generator=GeneratorConfig(features=16, blocks=4, height=32, width=32),
    )
    return stack, phi, cfg


@pytest.mark.slow
def test_refiner_improves_on_the_l2_estimate(tiny_train_config):
    stack, phi, cfg = _desk_scale(tiny_train_config)
    trainer = GanTrainer(cfg)
    checkpoint = trainer.train(stack, phi)

    noisy = l2_inputs(stack, phi, MinNormSolver(phi.rows), 0.0, 0)
    before = np.mean([psnr(x, x_hat) for x, x_hat in zip(stack, noisy)])
    after = np.mean([psnr(x, x_hat) for x, x_hat in zip(stack, trainer.refine(noisy))])
    assert after >= before + 2.0

    totals = np.array([record.total for record in checkpoint.history])
    smoothed = np.convolve(totals, np.ones(10) / 10, mode="valid")
    trailing = smoothed[-50:]
    assert len(trailing) == 50
    assert np.all(np.diff(trailing) <= 0.0)


@pytest.mark.slow
def test_ablation_without_skips_trains_at_desk_scale(tiny_train_config, tmp_path):
    stack, phi, cfg = _desk_scale(tiny_train_config)
    splits = DatasetSplits(train=stack, val=stack[:4], test=stack[:4])
    rows = _manager(tmp_path).run_ablation(splits, phi, cfg)
    assert [row["skip_enabled"] for row in rows] == [True, False]
    for row in rows:
        assert not row["numerical_failure"]
        assert row["epochs"] == 200
        assert np.isfinite(row["final_loss"])
        assert np.isfinite(row["mean_psnr_output"])
        assert -1.0 <= row["mean_ssim_output"] <= 1.0
