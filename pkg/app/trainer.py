import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch

from app.errors import CheckpointError, InvalidArgumentError, NumericalFailureError
from app.linear_recovery import MinNormSolver
from app.losses import discriminator_loss, total_loss
from app.metrics import SSIM_WINDOW, psnr, ssim
from app.models.imaging import ScanningBasis
from app.models.network import Checkpoint, EpochRecord, LossBreakdown, TrainConfig
from app.networks import Discriminator, FeatureExtractor, Generator, decay_groups
from app.serialization import read_checkpoint_file, write_checkpoint_file
from app.spi_core import measure_stack

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.spig"
TRAIN_LOG_NAME = "train_log.txt"

DTYPES = {"float32": torch.float32, "float64": torch.float64}


def build_optimizer(module: torch.nn.Module, cfg: TrainConfig) -> torch.optim.Optimizer:
    groups = decay_groups(module, cfg.weight_decay)
    if cfg.optimizer == "sgd":
        return torch.optim.SGD(groups, lr=cfg.learning_rate, momentum=cfg.momentum)
    return torch.optim.Adam(groups, lr=cfg.learning_rate, betas=cfg.betas, eps=cfg.eps)


def l2_inputs(
    stack: np.ndarray,
    phi: ScanningBasis,
    solver: MinNormSolver,
    sigma: float,
    seed: int,
    offset: int = 0,
) -> np.ndarray:
    """Acquire an (M, H, W) stack and return the clipped minimum-norm estimates, same shape."""
    y = measure_stack(stack, phi, sigma, seed, offset)
    estimates = solver.solve(y).T
    return np.clip(estimates, 0.0, 1.0).reshape(stack.shape)


class GanTrainer:
    """Adversarial training of the refiner that maps l2 estimates to clean images."""

    def __init__(
        self,
        cfg: TrainConfig,
        generator: Optional[Generator] = None,
        discriminator: Optional[Discriminator] = None,
        extractor: Optional[FeatureExtractor] = None,
    ):
        self.cfg = cfg
        self.dtype = DTYPES[cfg.dtype]
        torch.manual_seed(cfg.seed)

        self.generator = (generator or Generator(cfg.generator)).to(self.dtype)
        self.discriminator = (discriminator or Discriminator(cfg.discriminator)).to(self.dtype)
        self.extractor = (extractor or FeatureExtractor(cfg.extractor)).to(self.dtype)
        self.g_optimizer = build_optimizer(self.generator, cfg)
        self.d_optimizer = build_optimizer(self.discriminator, cfg)
        self.history: List[EpochRecord] = []

        logger.info(
            f"GanTrainer initialized: F={cfg.generator.features}, B={cfg.generator.blocks}, "
            f"skip={cfg.generator.skip_enabled}, extractor={cfg.extractor.mode}, optimizer={cfg.optimizer}"
        )

    def tensor(self, stack: np.ndarray) -> torch.Tensor:
        """(M, H, W) array -> (M, 1, H, W) tensor in the training dtype."""
        return torch.as_tensor(np.asarray(stack)[:, None, :, :], dtype=self.dtype)

    def discriminator_step(self, batch_real: torch.Tensor, batch_noisy: torch.Tensor) -> float:
        """One ascent step on log D(x) + log(1 - D(G(x_noisy))); the generator is not updated."""
        if batch_real.shape != batch_noisy.shape:
            raise InvalidArgumentError("real and noisy batches must have the same shape")
        # inference-mode fakes leave the generator's batch-norm statistics alone
        was_training = self.generator.training
        self.generator.eval()
        try:
            with torch.no_grad():
                fake = self.generator(batch_noisy)
        finally:
            self.generator.train(was_training)

        self.discriminator.train()
        loss = discriminator_loss(self.discriminator, batch_real, fake)
        if not torch.isfinite(loss):
            raise NumericalFailureError("discriminator loss is not finite", layer="discriminator")
        self.d_optimizer.zero_grad(set_to_none=True)
        loss.backward()
        self.d_optimizer.step()
        return float(loss.detach())

    def generator_step(self, batch_real: torch.Tensor, batch_noisy: torch.Tensor) -> LossBreakdown:
        """One descent step on l_rec; discriminator and extractor state is left untouched."""
        if batch_real.shape != batch_noisy.shape:
            raise InvalidArgumentError("real and noisy batches must have the same shape")
        self.generator.train()
        was_training = self.discriminator.training
        self.discriminator.eval()
        for param in self.discriminator.parameters():
            param.requires_grad_(False)
        try:
            terms = total_loss(batch_real, self.generator(batch_noisy), self.extractor, self.discriminator, self.cfg)
            if not torch.isfinite(terms.total):
                raise NumericalFailureError("generator loss is not finite", layer="generator")
            self.g_optimizer.zero_grad(set_to_none=True)
            terms.total.backward()
            self.g_optimizer.step()
        finally:
            for param in self.discriminator.parameters():
                param.requires_grad_(True)
            self.discriminator.train(was_training)
        return LossBreakdown(
            mse=float(terms.mse.detach()),
            sim=float(terms.sim.detach()),
            adv=float(terms.adv.detach()),
            total=float(terms.total.detach()),
        )

    def refine(self, noisy: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """Inference-mode generator output for an (M, H, W) stack of l2 estimates."""
        self.generator.eval()
        outputs = []
        with torch.no_grad():
            for start in range(0, len(noisy), batch_size):
                batch = self.tensor(noisy[start:start + batch_size])
                outputs.append(self.generator(batch)[:, 0].cpu().numpy().astype(np.float64))
        return np.concatenate(outputs) if outputs else np.empty((0,) + tuple(np.shape(noisy)[1:]))

    def validate(self, images: np.ndarray, noisy: np.ndarray) -> Tuple[float, Optional[float]]:
        refined = self.refine(noisy, self.cfg.batch_size)
        psnrs = [psnr(x, x_hat) for x, x_hat in zip(images, refined)]
        ssims = None
        if min(images.shape[1:]) >= SSIM_WINDOW:
            ssims = float(np.mean([ssim(x, x_hat) for x, x_hat in zip(images, refined)]))
        return float(np.mean(psnrs)), ssims

    def train(
        self,
        images: np.ndarray,
        phi: ScanningBasis,
        val_images: Optional[np.ndarray] = None,
        out_dir: Optional[Path] = None,
    ) -> Checkpoint:
        """Per minibatch: acquire -> l2 estimate -> discriminator step -> generator step."""
        images = np.asarray(images, dtype=np.float64)
        if images.ndim != 3 or len(images) == 0:
            raise InvalidArgumentError("training set must be a non-empty (M, H, W) stack")
        if images.shape[1] * images.shape[2] != phi.n:
            raise InvalidArgumentError(f"training images have {images.shape[1] * images.shape[2]} pixels, basis expects {phi.n}")
        if val_images is None or len(val_images) == 0:
            logger.warning("No validation split given; validation metrics use the training images")
            val_images = images
        val_images = np.asarray(val_images, dtype=np.float64)

        cfg = self.cfg
        solver = MinNormSolver(phi.rows)
        rng = np.random.default_rng(cfg.seed)
        sigma = cfg.noise_sigma
        cached = l2_inputs(images, phi, solver, 0.0, cfg.seed) if sigma == 0.0 else None
        val_noisy = l2_inputs(val_images, phi, solver, 0.0, cfg.seed)

        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)

        count = len(images)
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(count)
            sums = np.zeros(5)
            batches = 0
            try:
                for start in range(0, count, cfg.batch_size):
                    index = order[start:start + cfg.batch_size]
                    real = images[index]
                    if cached is not None:
                        noisy = cached[index]
                    else:
                        noisy = l2_inputs(real, phi, solver, sigma, cfg.seed, offset=(epoch - 1) * count + start)
                    real_t, noisy_t = self.tensor(real), self.tensor(noisy)
                    d_loss = self.discriminator_step(real_t, noisy_t)
                    parts = self.generator_step(real_t, noisy_t)
                    sums += (parts.mse, parts.sim, parts.adv, parts.total, d_loss)
                    batches += 1
            except NumericalFailureError as e:
                logger.error(f"Training aborted at epoch {epoch}: {e}")
                raise

            means = sums / batches
            val_psnr, val_ssim = self.validate(val_images, val_noisy)
            record = EpochRecord(
                epoch=epoch, mse=means[0], sim=means[1], adv=means[2], total=means[3], d_loss=means[4],
                val_psnr=val_psnr, val_ssim=val_ssim,
            )
            self.history.append(record)
            logger.info(record.log_line())

            if out_dir is not None:
                with (out_dir / TRAIN_LOG_NAME).open("a") as log_file:
                    log_file.write(record.log_line() + "\n")
                if epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs:
                    save_checkpoint(self.checkpoint(), out_dir / CHECKPOINT_NAME)

        return self.checkpoint()

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            config=self.cfg,
            generator_state={k: v.detach().clone() for k, v in self.generator.state_dict().items()},
            discriminator_state={k: v.detach().clone() for k, v in self.discriminator.state_dict().items()},
            history=list(self.history),
        )


def save_checkpoint(checkpoint: Checkpoint, path: Path) -> Path:
    blocks: Dict[str, np.ndarray] = {}
    for prefix, state in (("generator", checkpoint.generator_state), ("discriminator", checkpoint.discriminator_state)):
        for name, tensor in state.items():
            blocks[f"{prefix}.{name}"] = tensor.detach().cpu().to(torch.float64).numpy()
    echo = json.dumps({
        "config": checkpoint.config.model_dump(mode="json"),
        "history": [record.model_dump(mode="json") for record in checkpoint.history],
    })
    try:
        write_checkpoint_file(Path(path), echo, blocks)
    except OSError as e:
        logger.error(f"Failed to write checkpoint {path}: {e}")
        raise
    logger.info(f"Checkpoint saved: {path} (epochs recorded: {len(checkpoint.history)})")
    return Path(path)


def load_checkpoint(path: Path) -> Checkpoint:
    config_json, blocks = read_checkpoint_file(Path(path))
    try:
        echo = json.loads(config_json)
        config = TrainConfig(**echo["config"])
        history = [EpochRecord(**record) for record in echo.get("history", [])]
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"{path}: malformed config echo: {e}") from e

    states: Dict[str, Dict[str, torch.Tensor]] = {"generator": {}, "discriminator": {}}
    for name, values in blocks.items():
        prefix, _, key = name.partition(".")
        if prefix not in states:
            raise CheckpointError(f"{path}: unexpected parameter block {name}")
        states[prefix][key] = torch.from_numpy(np.array(values))
    return Checkpoint(
        config=config,
        generator_state=states["generator"],
        discriminator_state=states["discriminator"],
        history=history,
    )


def build_generator(checkpoint: Checkpoint) -> Generator:
    """Inference-mode generator restored from a checkpoint."""
    generator = Generator(checkpoint.config.generator).to(DTYPES[checkpoint.config.dtype])
    try:
        generator.load_state_dict(checkpoint.generator_state)
    except RuntimeError as e:
        raise CheckpointError(f"checkpoint does not match the generator layout: {e}") from e
    return generator.eval()
