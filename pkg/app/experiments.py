import logging
import statistics
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.config.settings import Settings, SolverSettings, TrainSettings
from app.dataset import load_directory, load_frames, synthetic_images
from app.errors import InvalidArgumentError, NumericalFailureError
from app.information import METHODS, REPORT_COLUMNS
from app.linear_recovery import MinNormSolver
from app.metrics import aggregate, psnr, quality_score
from app.models.experiment import DatasetSplits, FrameRun, QualityRecord, ReportRow, SweepSpec, TimingModel
from app.models.imaging import Image, ScanningBasis
from app.models.network import (
    Checkpoint,
    DiscriminatorConfig,
    ExtractorConfig,
    GeneratorConfig,
    TrainConfig,
)
from app.models.recovery import IterativeConfig, SparsifyingBasis
from app.networks import Generator, count_parameters
from app.reconstructor import Reconstructor
from app.report import ReportWriter
from app.spi_core import acquire, build_scanning_basis, image_rng, measurement_count, sigma_from_noise_level
from app.trainer import GanTrainer, build_generator, l2_inputs

logger = logging.getLogger(__name__)


class ExperimentManager:
    """Runs reconstruction experiments against the configured settings."""

    def __init__(
        self,
        settings: Settings,
        solver_settings: SolverSettings,
        train_settings: TrainSettings,
        out_dir: Optional[Path] = None,
    ):
        self.settings = settings
        self.solver_settings = solver_settings
        self.train_settings = train_settings
        self.out_dir = Path(out_dir if out_dir is not None else settings.out_dir)

    def _map(self, fn: Callable, items: Sequence) -> List:
        """Ordered map; runs on a thread pool when more than one worker is configured."""
        if self.settings.workers <= 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.settings.workers) as pool:
            return list(pool.map(fn, items))

    def basis(self, sr: float, n: int, seed: int) -> ScanningBasis:
        return build_scanning_basis(measurement_count(sr, n), n, seed)

    def solver_config(self, method: str) -> IterativeConfig:
        s = self.solver_settings
        max_iters = s.ista_max_iters if method == "ista" else s.max_iters
        return IterativeConfig(
            max_iters=max_iters,
            tolerance=s.tolerance,
            l1_weight=s.l1_weight,
            accelerated=s.accelerated,
        )

    def reconstructor(
        self,
        phi: ScanningBasis,
        method: str,
        shape: Tuple[int, int],
        generator: Optional[Generator] = None,
    ) -> Reconstructor:
        psi = None
        if method == "ista":
            psi = SparsifyingBasis(kind=self.solver_settings.sparse_basis, height=shape[0], width=shape[1])
        return Reconstructor(phi, method, self.solver_config(method), psi=psi, generator=generator, shape=shape)

    def train_config(self, height: int, width: int, seed: Optional[int] = None, **overrides) -> TrainConfig:
        t = self.train_settings
        seed = self.settings.seed if seed is None else seed
        values = dict(
            learning_rate=t.learning_rate,
            batch_size=t.batch_size,
            epochs=t.epochs,
            weight_decay=t.weight_decay,
            lambda_sim=t.lambda_sim,
            lambda_adv=t.lambda_adv,
            optimizer=t.optimizer,
            seed=seed,
            dtype=t.dtype,
            checkpoint_every=t.checkpoint_every,
            generator=GeneratorConfig(
                features=t.features, blocks=t.blocks, skip_enabled=t.skip_enabled, height=height, width=width
            ),
            discriminator=DiscriminatorConfig(channels=t.disc_channels, stages=t.disc_stages),
            extractor=ExtractorConfig.parse(
                self.settings.extractor, layer=t.feature_layer, width_divisor=t.extractor_width_divisor, seed=seed
            ),
        )
        values.update(overrides)
        return TrainConfig(**values)

    def evaluate_images(
        self,
        images: np.ndarray,
        names: Sequence[str],
        phi: ScanningBasis,
        method: str,
        noise_level: float,
        seed: int,
        checkpoint: Optional[Checkpoint] = None,
        writer: Optional[ReportWriter] = None,
        parallel: bool = True,
    ) -> ReportRow:
        """Acquire and reconstruct every image; per-image scores are aggregated into one row.

        Gan rows report the extractor mode of the checkpoint that produced the refiner.
        """
        if len(images) == 0:
            raise InvalidArgumentError("no images to evaluate")
        shape = tuple(images.shape[1:])
        sigma = sigma_from_noise_level(noise_level, phi.n)
        refiner = checkpoint is not None and method == "gan"
        recon = self.reconstructor(phi, method, shape, build_generator(checkpoint) if refiner else None)

        def score(index: int):
            y = acquire(Image.from_array(images[index]), phi, sigma, image_rng(seed, index))
            result = recon.reconstruct(y)
            return quality_score(images[index], result.pixels), result.clipped_fraction

        indices = list(range(len(images)))
        results = self._map(score, indices) if parallel else [score(i) for i in indices]
        scores = [q for q, _ in results]

        if writer is not None:
            for name, (q, clipped) in zip(names, results):
                writer.write_record(QualityRecord(
                    image=name, method=method, sr=phi.sampling_rate, noise_level=noise_level,
                    psnr_db=q.psnr_db, ssim=q.ssim, clipped_fraction=clipped,
                ))

        mean_psnr, std_psnr = aggregate(q.psnr_db for q in scores)
        mean_ssim, std_ssim = aggregate(q.ssim for q in scores)
        return ReportRow(
            method=method,
            sr=phi.sampling_rate,
            noise_level=noise_level,
            mean_psnr=mean_psnr,
            std_psnr=std_psnr,
            mean_ssim=mean_ssim,
            std_ssim=std_ssim,
            n=len(scores),
            extractor_mode=checkpoint.config.extractor.mode if refiner else "none",
            seed=seed,
        )

    def train_gan(
        self,
        splits: DatasetSplits,
        phi: ScanningBasis,
        cfg: Optional[TrainConfig] = None,
        out_dir: Optional[Path] = None,
    ) -> Checkpoint:
        height, width = splits.train.shape[1:]
        cfg = cfg or self.train_config(height, width)
        try:
            trainer = GanTrainer(cfg)
            return trainer.train(splits.train, phi, splits.val, out_dir)
        except Exception as e:
            logger.error(f"Failed to train the refiner at SR={phi.sampling_rate:.4f}: {e}")
            raise

    def run_sweep(
        self,
        splits: DatasetSplits,
        spec: SweepSpec,
        checkpoints: Optional[Dict[Tuple[float, int], Checkpoint]] = None,
        csv_path: Optional[Path] = None,
    ) -> Path:
        """Test-split PSNR/SSIM for every (seed, rate, method, noise level) cell.

        One basis per (rate, seed) serves both training and evaluation. Refiner
        checkpoints are taken from ``checkpoints`` keyed by (rate, seed) or trained here.
        """
        unknown = [m for m in spec.methods if m not in METHODS]
        if unknown:
            raise InvalidArgumentError(f"unknown methods in sweep: {', '.join(unknown)}")
        images = splits.test
        if len(images) == 0:
            raise InvalidArgumentError("the test split is empty")
        names = splits.test_names or [f"test_{i:05d}" for i in range(len(images))]
        n = images.shape[1] * images.shape[2]
        checkpoints = dict(checkpoints or {})
        csv_path = Path(csv_path) if csv_path is not None else self.out_dir / "sweep.csv"

        with ReportWriter(csv_path, REPORT_COLUMNS, csv_path.with_suffix(".jsonl")) as writer:
            for seed in spec.seeds:
                for sr in spec.sampling_rates:
                    phi = self.basis(sr, n, seed)
                    checkpoint = None
                    if "gan" in spec.methods:
                        checkpoint = checkpoints.get((sr, seed))
                        if checkpoint is None:
                            run_dir = self.out_dir / f"gan_sr{sr:.2f}_seed{seed}"
                            checkpoint = self.train_gan(splits, phi, self.train_config(*images.shape[1:], seed=seed), run_dir)

                    cells = [(method, level) for method in spec.methods for level in spec.noise_levels]

                    def run_cell(cell):
                        method, level = cell
                        return self.evaluate_images(
                            images, names, phi, method, level, seed, checkpoint, writer, parallel=False,
                        )

                    for (method, level), row in zip(cells, self._map(run_cell, cells)):
                        writer.write_row(row)
                        logger.info(
                            f"Sweep cell done: method={method} sr={sr:.2f} level={level:g} seed={seed} "
                            f"psnr={row.mean_psnr:.3f}"
                        )
        return csv_path

    def evaluate(
        self,
        data_dir: Path,
        phi: ScanningBasis,
        method: str,
        noise_level: float = 0.0,
        seed: int = 0,
        checkpoint: Optional[Checkpoint] = None,
        writer: Optional[ReportWriter] = None,
    ) -> ReportRow:
        """Generalization check on an arbitrary image directory, resized like the training data."""
        side = int(round(np.sqrt(phi.n)))
        names, images, skipped = load_directory(data_dir, side)
        if len(images) == 0:
            raise InvalidArgumentError(f"no decodable images in {data_dir}")
        if skipped:
            logger.warning(f"Evaluation skipped {skipped} undecodable files in {data_dir}")
        return self.evaluate_images(images, names, phi, method, noise_level, seed, checkpoint, writer)

    def reconstruct_frames(
        self,
        frame_dir: Path,
        phi: ScanningBasis,
        method: str,
        generator: Optional[Generator] = None,
        noise_level: float = 0.0,
        seed: int = 0,
    ) -> FrameRun:
        """Per-frame acquire then reconstruct, in frame order, timing each reconstruction."""
        side = int(round(np.sqrt(phi.n)))
        names, frames = load_frames(frame_dir, side)
        recon = self.reconstructor(phi, method, (side, side), generator)
        sigma = sigma_from_noise_level(noise_level, phi.n)

        outputs, seconds = [], []
        for index, frame in enumerate(frames):
            y = acquire(Image.from_array(frame), phi, sigma, image_rng(seed, index))
            result = recon.reconstruct(y)
            outputs.append(result.pixels)
            seconds.append(result.seconds)
        logger.info(f"Reconstructed {len(outputs)} frames with {method}, median {statistics.median(seconds):.4f}s")
        return FrameRun(names=names, frames=outputs, seconds=seconds)

    def benchmark_timing(
        self,
        phi: ScanningBasis,
        method: str,
        generator: Optional[Generator] = None,
        n_frames: int = 10,
        images: Optional[np.ndarray] = None,
    ) -> TimingModel:
        """Median wall-clock reconstruction time plus the modulator-bound acquisition time."""
        if n_frames < 1:
            raise InvalidArgumentError(f"n_frames must be positive, got {n_frames}")
        side = int(round(np.sqrt(phi.n)))
        if images is None:
            images = synthetic_images(n_frames, side, self.settings.seed)
        recon = self.reconstructor(phi, method, (side, side), generator)

        seconds = []
        for index in range(n_frames):
            frame = images[index % len(images)]
            y = acquire(Image.from_array(frame), phi, 0.0, image_rng(self.settings.seed, index))
            seconds.append(recon.reconstruct(y).seconds)
        return TimingModel(
            method=method,
            k=phi.k,
            n=phi.n,
            dmd_rate=self.settings.dmd_rate,
            reconstruction_seconds=max(statistics.median(seconds), 1e-9),
        )

    def run_ablation(self, splits: DatasetSplits, phi: ScanningBasis, cfg: TrainConfig) -> List[Dict[str, object]]:
        """Train with skip connections on and off on the same data and compare."""
        images = splits.train
        noisy = l2_inputs(images, phi, MinNormSolver(phi.rows), 0.0, cfg.seed)
        input_psnr = float(np.mean([psnr(x, x_hat) for x, x_hat in zip(images, noisy)]))

        rows = []
        for skip_enabled in (True, False):
            variant = cfg.model_copy(update={
                "generator": cfg.generator.model_copy(update={"skip_enabled": skip_enabled}),
            })
            trainer = GanTrainer(variant)
            row = {
                "skip_enabled": skip_enabled,
                "parameters": count_parameters(trainer.generator),
                "epochs": variant.epochs,
                "mean_psnr_input": input_psnr,
                "numerical_failure": False,
            }
            try:
                checkpoint = trainer.train(images, phi, splits.val)
            except NumericalFailureError as e:
                logger.warning(f"Ablation variant skip_enabled={skip_enabled} failed numerically: {e}")
                row.update(numerical_failure=True, final_loss=None, mean_psnr_output=None, mean_ssim_output=None)
                rows.append(row)
                continue
            refined = trainer.refine(noisy, variant.batch_size)
            scores = [quality_score(x, x_hat) for x, x_hat in zip(images, refined)]
            row.update(
                final_loss=checkpoint.history[-1].total,
                mean_psnr_output=aggregate(q.psnr_db for q in scores)[0],
                mean_ssim_output=aggregate(q.ssim for q in scores)[0],
            )
            rows.append(row)
            logger.info(f"Ablation skip_enabled={skip_enabled}: output PSNR {row['mean_psnr_output']:.3f} dB")
        return rows

    def learning_rate_study(
        self,
        splits: DatasetSplits,
        phi: ScanningBasis,
        cfg: TrainConfig,
        learning_rates: Iterable[float],
    ) -> Dict[float, List[float]]:
        """Validation PSNR per epoch for each learning rate, all else equal."""
        curves = {}
        for rate in learning_rates:
            trainer = GanTrainer(cfg.model_copy(update={"learning_rate": float(rate)}))
            checkpoint = trainer.train(splits.train, phi, splits.val)
            curves[float(rate)] = [record.val_psnr for record in checkpoint.history]
            logger.info(f"Learning rate {rate:g}: final validation PSNR {curves[float(rate)][-1]:.3f} dB")
        return curves
