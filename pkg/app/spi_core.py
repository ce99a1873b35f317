"""Single-pixel camera model: Walsh patterns, Gaussian measurement noise, acquisition."""
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import scipy.linalg

from app.errors import InvalidArgumentError
from app.models.imaging import Image, MeasurementVector, ScanningBasis
from app.serialization import read_basis_file, write_basis_file

logger = logging.getLogger(__name__)


def _is_power_of_two(value: int) -> bool:
    return value >= 1 and value & (value - 1) == 0


def hadamard(order: int, dtype=np.float64) -> np.ndarray:
    """Sylvester Hadamard matrix of a power-of-two order (first row all +1)."""
    if not isinstance(order, (int, np.integer)) or not _is_power_of_two(int(order)):
        raise InvalidArgumentError(f"Hadamard order must be a power of two, got {order}")
    return scipy.linalg.hadamard(int(order), dtype=dtype)


def measurement_count(sampling_rate: float, n: int) -> int:
    """K = round(SR * N), kept within [1, N]."""
    if not 0.0 < sampling_rate <= 1.0:
        raise InvalidArgumentError(f"sampling rate must lie in (0, 1], got {sampling_rate}")
    return int(min(n, max(1, round(sampling_rate * n))))


def sigma_from_noise_level(noise_level: float, n: int) -> float:
    """The noise level is the noise standard deviation divided by the pixel count."""
    if noise_level < 0.0:
        raise InvalidArgumentError(f"noise level must be non-negative, got {noise_level}")
    return float(noise_level) * n


def build_scanning_basis(k: int, n: int, seed: int) -> ScanningBasis:
    """First K rows of a seeded row permutation of the 0/1 Walsh matrix, each scaled to unit norm."""
    if not _is_power_of_two(n):
        raise InvalidArgumentError(f"pixel count N must be a power of two, got {n}")
    if not 1 <= k <= n:
        raise InvalidArgumentError(f"need 1 <= K <= N, got K={k}, N={n}")

    walsh = hadamard(n, dtype=np.int8)
    order = np.random.default_rng(seed).permutation(n)[:k]
    binary = (walsh[order].astype(np.float64) + 1.0) / 2.0
    rows = binary / np.linalg.norm(binary, axis=1, keepdims=True)

    basis = ScanningBasis(rows=rows, seed=seed)
    logger.info(f"Scanning basis built: K={k}, N={n}, SR={basis.sampling_rate:.4f}, seed={seed}")
    return basis


def sample_noise(sigma: float, k: int, rng: np.random.Generator) -> np.ndarray:
    if sigma < 0.0:
        raise InvalidArgumentError(f"noise sigma must be non-negative, got {sigma}")
    if sigma == 0.0:
        return np.zeros(k)
    return rng.normal(0.0, sigma, size=k)


def acquire(x: Image, phi: ScanningBasis, sigma: float, rng: Optional[np.random.Generator] = None) -> MeasurementVector:
    """y = Phi vec(x) + q with q ~ N(0, sigma^2 I)."""
    if x.n != phi.n:
        raise InvalidArgumentError(f"image has {x.n} pixels but the basis expects {phi.n}")
    if rng is None:
        rng = np.random.default_rng()
    values = phi.rows @ x.vector() + sample_noise(sigma, phi.k, rng)
    return MeasurementVector(values=values, noise_sigma=sigma, noise_level=sigma / phi.n)


def measure_stack(stack: np.ndarray, phi: ScanningBasis, sigma: float, seed: int, offset: int = 0) -> np.ndarray:
    """Measure an (M, H, W) stack; returns (K, M). Image i uses the stream (seed, offset + i)."""
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim != 3 or stack.shape[1] * stack.shape[2] != phi.n:
        raise InvalidArgumentError(f"stack shape {stack.shape} does not match N={phi.n}")
    if sigma < 0.0:
        raise InvalidArgumentError(f"noise sigma must be non-negative, got {sigma}")
    y = phi.rows @ stack.reshape(stack.shape[0], -1).T
    if sigma > 0.0:
        for i in range(stack.shape[0]):
            y[:, i] += sample_noise(sigma, phi.k, image_rng(seed, offset + i))
    return y


def image_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


def acquire_batch(
    images: Sequence[Union[Image, np.ndarray]],
    phi: ScanningBasis,
    sigma: float,
    seed: int,
) -> List[MeasurementVector]:
    """Acquire each image with its own RNG stream derived from (seed, index)."""
    measurements = []
    for index, image in enumerate(images):
        if not isinstance(image, Image):
            image = Image.from_array(image)
        measurements.append(acquire(image, phi, sigma, image_rng(seed, index)))
    return measurements


def save_basis(phi: ScanningBasis, path: Path) -> Path:
    write_basis_file(path, phi.rows)
    return Path(path)


def load_basis(path: Path) -> ScanningBasis:
    rows = read_basis_file(path)
    # float32 storage: restore exact unit norms
    rows = rows / np.linalg.norm(rows, axis=1, keepdims=True)
    return ScanningBasis(rows=rows, seed=None)
