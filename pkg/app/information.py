import json
from pathlib import Path

SWEEP_DEFAULTS = {
  "sampling_rates": [0.05, 0.10, 0.15, 0.20, 0.25, 0.30],
  "noise_levels": [1e-4, 3e-4, 5e-4, 8e-4, 1e-3, 3e-3, 8e-3, 2e-2],
  "methods": ["l2", "cgd", "ap", "ista", "dgi"]
}

DATASET_DEFAULTS = {
  "image_size": 64,
  "train_count": 40000,
  "val_count": 3000,
  "test_count": 2000,
  "luma_weights": [0.299, 0.587, 0.114]
}

DMD_MODULATION_RATE = 20000.0

METHODS = ("l2", "cgd", "ap", "ista", "dgi", "gan")

REPORT_COLUMNS = [
  "method", "sr", "noise_level", "mean_psnr", "std_psnr",
  "mean_ssim", "std_ssim", "n", "extractor_mode", "seed"
]

TIMING_COLUMNS = [
  "method", "sr", "k", "dmd_rate", "acquisition_seconds",
  "reconstruction_seconds", "total_seconds", "fps"
]

ABLATION_COLUMNS = [
  "skip_enabled", "parameters", "epochs", "final_loss", "mean_psnr_input",
  "mean_psnr_output", "mean_ssim_output", "numerical_failure"
]

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".gif", ".webp")

# 19-layer feature topology; integers are conv output channels, "M" is 2x2 max-pooling.
_vgg19 = json.loads((Path(__file__).parent / "json" / "vgg19.json").read_text())
VGG19_TOPOLOGY = _vgg19["features"]
VGG19_NORMALIZATION = _vgg19["normalization"]

methods_text = ", ".join(METHODS)

USAGE = f"""Single-pixel imaging simulation and reconstruction toolkit.

Encodes grayscale images with a permuted, row-normalized 0/1 Walsh basis,
reconstructs them ({methods_text}) and runs sampling-rate / noise sweeps,
ablations, video reconstruction and timing benchmarks.

Configuration precedence: command-line flag > --config file > SPI_* environment > defaults.
"""
