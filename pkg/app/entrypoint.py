import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from app.config.settings import load_settings
from app.dataset import load_dataset, load_image, save_png, write_synthetic_dataset
from app.errors import InvalidArgumentError, SpiError
from app.experiments import ExperimentManager
from app.information import ABLATION_COLUMNS, METHODS, REPORT_COLUMNS, TIMING_COLUMNS, USAGE
from app.metrics import quality_score
from app.models.experiment import DatasetSpec, QualityRecord, SweepSpec, TimingModel
from app.models.imaging import Image
from app.models.network import ExtractorConfig
from app.networks import export_pretrained_vgg19
from app.report import ReportWriter
from app.spi_core import acquire, image_rng, load_basis, save_basis, sigma_from_noise_level
from app.trainer import build_generator, load_checkpoint

logger = logging.getLogger(__name__)

GLOBAL_FLAGS = ("seed", "out_dir", "sr", "noise_level", "extractor", "workers", "log_level")


def _floats(text: str) -> List[float]:
    return [float(item) for item in text.split(",") if item.strip()]


def _ints(text: str) -> List[int]:
    return [int(item) for item in text.split(",") if item.strip()]


def _methods(text: str) -> List[str]:
    methods = [item.strip() for item in text.split(",") if item.strip()]
    for method in methods:
        if method not in METHODS:
            raise argparse.ArgumentTypeError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    return methods


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", type=Path, help="flat key=value configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir", type=Path)
    common.add_argument("--sr", type=float, help="sampling rate K/N in (0, 1]")
    common.add_argument("--noise-level", type=float, help="noise standard deviation divided by N")
    common.add_argument("--extractor", help="'random' or 'file:<path>'")
    common.add_argument("--workers", type=int)
    common.add_argument("--log-level")

    parser = argparse.ArgumentParser(
        prog="spi",
        description=USAGE,
        formatter_class=argparse.RawDescriptionHelpFormatter,
        parents=[common],
        argument_default=argparse.SUPPRESS,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        return sub.add_parser(name, help=help_text, parents=[common], argument_default=argparse.SUPPRESS)

    basis = command("basis", "build and save a scanning basis")
    basis.add_argument("--output", type=Path)

    acquire_cmd = command("acquire", "measure one image")
    acquire_cmd.add_argument("--image", type=Path, required=True)
    acquire_cmd.add_argument("--basis", type=Path)

    recon = command("recon", "acquire and reconstruct one image")
    recon.add_argument("--image", type=Path, required=True)
    recon.add_argument("--method", choices=METHODS)
    recon.add_argument("--checkpoint", type=Path)
    recon.add_argument("--basis", type=Path)

    train = command("train", "train the adversarial refiner")
    train.add_argument("--data-dir", type=Path)

    evaluate = command("eval", "evaluate one method on an image directory")
    evaluate.add_argument("--data-dir", type=Path, required=True)
    evaluate.add_argument("--method", choices=METHODS)
    evaluate.add_argument("--checkpoint", type=Path)

    sweep = command("sweep", "sampling-rate and noise-level sweep")
    sweep.add_argument("--data-dir", type=Path)
    sweep.add_argument("--methods", type=_methods)
    sweep.add_argument("--rates", type=_floats)
    sweep.add_argument("--levels", type=_floats)
    sweep.add_argument("--seeds", type=_ints)

    video = command("video", "reconstruct a directory of frames")
    video.add_argument("--frames", type=Path, required=True)
    video.add_argument("--method", choices=METHODS)
    video.add_argument("--checkpoint", type=Path)

    bench = command("bench", "acquisition plus reconstruction timing")
    bench.add_argument("--methods", type=_methods)
    bench.add_argument("--n-frames", type=int)
    bench.add_argument("--checkpoint", type=Path)

    ablation = command("ablation", "train with and without skip connections")
    ablation.add_argument("--data-dir", type=Path)

    synth = command("synth", "write the synthetic dataset as PNG files")
    synth.add_argument("--count", type=int)

    export = command("export-extractor", "store pretrained 19-layer feature weights as a weight file")
    export.add_argument("--output", type=Path, required=True)
    return parser


class Cli:
    def __init__(self, args: argparse.Namespace):
        self.args = args
        options = vars(args)
        overrides = {key: options.get(key) for key in GLOBAL_FLAGS}
        self.settings, self.solver_settings, self.train_settings, self.dataset_settings = load_settings(
            options.get("config"), overrides
        )
        ExtractorConfig.parse(self.settings.extractor)
        self.out_dir = Path(self.settings.out_dir)
        self.manager = ExperimentManager(self.settings, self.solver_settings, self.train_settings, self.out_dir)

    def option(self, name: str, default=None):
        return getattr(self.args, name, default)

    @property
    def n(self) -> int:
        return self.settings.image_size ** 2

    def basis(self):
        path = self.option("basis")
        if path is not None:
            phi = load_basis(path)
            if phi.n != self.n:
                raise InvalidArgumentError(f"basis file has N={phi.n}, image size needs N={self.n}")
            return phi
        return self.manager.basis(self.settings.sr, self.n, self.settings.seed)

    def checkpoint(self, method: str):
        if method != "gan":
            return None
        path = self.option("checkpoint")
        if path is None:
            raise InvalidArgumentError("--checkpoint is required for --method gan")
        return load_checkpoint(path)

    def generator(self, method: str):
        checkpoint = self.checkpoint(method)
        return build_generator(checkpoint) if checkpoint is not None else None

    def dataset_spec(self, data_dir: Optional[Path] = None) -> DatasetSpec:
        d = self.dataset_settings
        return DatasetSpec(
            root=data_dir or d.data_dir,
            size=self.settings.image_size,
            train_count=d.train_count,
            val_count=d.val_count,
            test_count=d.test_count,
            scale=d.scale,
            seed=self.settings.seed,
            synthetic_count=d.synthetic_count,
        )

    def run(self) -> int:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        handler = getattr(self, "cmd_" + self.args.command.replace("-", "_"))
        return handler()

    def cmd_basis(self) -> int:
        phi = self.manager.basis(self.settings.sr, self.n, self.settings.seed)
        path = save_basis(phi, self.option("output") or self.out_dir / "basis.spib")
        print(json.dumps({"basis": str(path), "k": phi.k, "n": phi.n, "sr": phi.sampling_rate, "seed": phi.seed}))
        return 0

    def _measure(self):
        phi = self.basis()
        try:
            pixels = load_image(self.args.image, self.settings.image_size)
        except OSError as e:
            raise InvalidArgumentError(f"cannot decode image {self.args.image}: {e}") from e
        sigma = sigma_from_noise_level(self.settings.noise_level, phi.n)
        y = acquire(Image.from_array(pixels), phi, sigma, image_rng(self.settings.seed, 0))
        return phi, pixels, y

    def cmd_acquire(self) -> int:
        phi, _, y = self._measure()
        path = self.out_dir / f"{self.args.image.stem}_measurements.npy"
        np.save(path, y.values)
        print(json.dumps({"measurements": str(path), "k": y.k, "noise_sigma": y.noise_sigma, "noise_level": y.noise_level}))
        return 0

    def cmd_recon(self) -> int:
        method = self.option("method") or self.settings.method
        phi, pixels, y = self._measure()
        recon = self.manager.reconstructor(phi, method, pixels.shape, self.generator(method))
        result = recon.reconstruct(y)
        if result.clipped_fraction > 0.0:
            logger.warning(f"{result.clipped_fraction:.2%} of the l2 estimate was clipped to [0, 1]")

        stem = self.args.image.stem
        save_png(result.pixels, self.out_dir / f"{stem}_{method}.png")
        score = quality_score(pixels, result.pixels)
        record = QualityRecord(
            image=self.args.image.name, method=method, sr=phi.sampling_rate,
            noise_level=self.settings.noise_level, psnr_db=score.psnr_db, ssim=score.ssim,
            clipped_fraction=result.clipped_fraction,
        )
        with (self.out_dir / "quality.jsonl").open("a") as f:
            f.write(record.model_dump_json() + "\n")
        print(record.model_dump_json())
        return 0

    def cmd_train(self) -> int:
        splits = load_dataset(self.dataset_spec(self.option("data_dir")))
        phi = self.manager.basis(self.settings.sr, self.n, self.settings.seed)
        save_basis(phi, self.out_dir / "basis.spib")
        checkpoint = self.manager.train_gan(splits, phi, out_dir=self.out_dir)
        last = checkpoint.history[-1]
        print(json.dumps({"checkpoint": str(self.out_dir / "checkpoint.spig"), "epochs": last.epoch, "val_psnr": last.val_psnr}))
        return 0

    def cmd_eval(self) -> int:
        method = self.option("method") or self.settings.method
        phi = self.basis()
        path = self.out_dir / "eval.csv"
        with ReportWriter(path, REPORT_COLUMNS, path.with_suffix(".jsonl")) as writer:
            row = self.manager.evaluate(
                self.args.data_dir, phi, method, self.settings.noise_level, self.settings.seed,
                self.checkpoint(method), writer,
            )
            writer.write_row(row)
        print(row.model_dump_json())
        return 0

    def cmd_sweep(self) -> int:
        defaults = SweepSpec()
        spec = SweepSpec(
            sampling_rates=self.option("rates") or defaults.sampling_rates,
            noise_levels=self.option("levels") or defaults.noise_levels,
            methods=self.option("methods") or defaults.methods,
            seeds=self.option("seeds") or [self.settings.seed],
        )
        splits = load_dataset(self.dataset_spec(self.option("data_dir")))
        path = self.manager.run_sweep(splits, spec)
        print(json.dumps({"report": str(path)}))
        return 0

    def cmd_video(self) -> int:
        method = self.option("method") or self.settings.method
        phi = self.basis()
        run = self.manager.reconstruct_frames(
            self.args.frames, phi, method, self.generator(method), self.settings.noise_level, self.settings.seed
        )
        frame_dir = self.out_dir / "frames"
        frame_dir.mkdir(parents=True, exist_ok=True)
        with ReportWriter(self.out_dir / "video_timing.csv", ["frame"] + TIMING_COLUMNS) as writer:
            for name, frame, seconds in zip(run.names, run.frames, run.seconds):
                save_png(frame, frame_dir / f"{Path(name).stem}.png")
                timing = TimingModel(
                    method=method, k=phi.k, n=phi.n, dmd_rate=self.settings.dmd_rate,
                    reconstruction_seconds=max(seconds, 1e-9),
                )
                writer.write_row({"frame": name, **timing.model_dump()})
        print(json.dumps({"frames": len(run.frames), "output": str(frame_dir)}))
        return 0

    def cmd_bench(self) -> int:
        methods = self.option("methods") or [self.settings.method]
        phi = self.basis()
        with ReportWriter(self.out_dir / "timing.csv", TIMING_COLUMNS) as writer:
            for method in methods:
                timing = self.manager.benchmark_timing(phi, method, self.generator(method), self.option("n_frames", 10))
                writer.write_row(timing)
                print(timing.model_dump_json())
        return 0

    def cmd_ablation(self) -> int:
        splits = load_dataset(self.dataset_spec(self.option("data_dir")))
        phi = self.manager.basis(self.settings.sr, self.n, self.settings.seed)
        cfg = self.manager.train_config(self.settings.image_size, self.settings.image_size)
        with ReportWriter(self.out_dir / "ablation.csv", ABLATION_COLUMNS) as writer:
            writer.write_rows(self.manager.run_ablation(splits, phi, cfg))
        print(json.dumps({"report": str(self.out_dir / "ablation.csv")}))
        return 0

    def cmd_synth(self) -> int:
        count = self.option("count") or self.dataset_settings.synthetic_count
        paths = write_synthetic_dataset(self.out_dir / "synthetic", count, self.settings.image_size, self.settings.seed)
        print(json.dumps({"images": len(paths), "output": str(self.out_dir / "synthetic")}))
        return 0

    def cmd_export_extractor(self) -> int:
        path = export_pretrained_vgg19(self.args.output)
        print(json.dumps({"weights": str(path)}))
        return 0


def _reason(error: BaseException) -> str:
    return " ".join(str(error).replace('"', "'").split())


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    try:
        cli = Cli(args)
        logging.getLogger().setLevel(cli.settings.log_level.upper())
        return cli.run()
    except SpiError as e:
        logger.error(f"Command {args.command} failed: {e}")
        print(f'error={e.kind} reason="{_reason(e)}"', file=sys.stderr)
        return 2
    except Exception as e:
        logger.exception(f"Command {args.command} failed unexpectedly")
        print(f'error=internal reason="{_reason(e)}"', file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
