import math
from typing import Iterable, Optional, Tuple

import numpy as np
from skimage.metrics import structural_similarity

from app.errors import InvalidArgumentError
from app.models.experiment import QualityScore

PSNR_CAP_DB = 99.0
ZERO_MSE = 1e-12
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(x, x_hat) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(getattr(x, "pixels", x), dtype=np.float64)
    b = np.asarray(getattr(x_hat, "pixels", x_hat), dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(x, x_hat) -> float:
    a, b = _pair(x, x_hat)
    diff = a - b
    return float(np.mean(diff * diff))


def psnr(x, x_hat, peak: float = 1.0, cap: float = PSNR_CAP_DB) -> float:
    """10 log10(peak^2 / MSE), capped when the error vanishes."""
    if peak <= 0.0:
        raise InvalidArgumentError(f"peak must be positive, got {peak}")
    error = mse(x, x_hat)
    if error < ZERO_MSE:
        return cap
    return min(cap, 10.0 * math.log10(peak * peak / error))


def ssim(x, x_hat, data_range: float = 1.0) -> float:
    """Mean structural similarity over all 11 x 11 Gaussian-weighted windows (valid region)."""
    a, b = _pair(x, x_hat)
    if a.ndim != 2 or min(a.shape) < SSIM_WINDOW:
        raise InvalidArgumentError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    # sigma 1.5 with the default truncation gives the 11-tap window; the border crop leaves the valid region
    value = structural_similarity(
        a,
        b,
        data_range=data_range,
        gaussian_weights=True,
        sigma=SSIM_SIGMA,
        use_sample_covariance=False,
        K1=SSIM_K1,
        K2=SSIM_K2,
    )
    return float(np.clip(value, -1.0, 1.0))


def quality_score(x, x_hat, peak: float = 1.0) -> QualityScore:
    """PSNR, SSIM and MSE together; SSIM is None for images below the window size."""
    a, b = _pair(x, x_hat)
    value = ssim(a, b, data_range=peak) if min(a.shape) >= SSIM_WINDOW else None
    return QualityScore(psnr_db=psnr(a, b, peak=peak), ssim=value, mse=mse(a, b))


def aggregate(values: Iterable[Optional[float]]) -> Tuple[Optional[float], Optional[float]]:
    """Mean and population standard deviation, ignoring missing entries."""
    present = [v for v in values if v is not None]
    if not present:
        return None, None
    array = np.asarray(present, dtype=np.float64)
    return float(array.mean()), float(array.std(ddof=0))
