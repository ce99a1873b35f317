"""Image ingestion: directory datasets, frame sequences and the bundled synthetic generator."""
import logging
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
from PIL import Image as PILImage
from scipy.ndimage import gaussian_filter

from app.errors import InvalidArgumentError
from app.information import DATASET_DEFAULTS, IMAGE_SUFFIXES
from app.models.experiment import DatasetSpec, DatasetSplits

logger = logging.getLogger(__name__)

LUMA_WEIGHTS = tuple(DATASET_DEFAULTS["luma_weights"])


def to_grayscale(rgb: np.ndarray, weights: Sequence[float] = LUMA_WEIGHTS) -> np.ndarray:
    """(H, W, 3) array in [0, 1] -> (H, W) luma."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise InvalidArgumentError(f"expected an (H, W, 3) array, got shape {rgb.shape}")
    return rgb @ np.asarray(weights, dtype=np.float64)


def load_image(path: Path, size: int, weights: Sequence[float] = LUMA_WEIGHTS) -> np.ndarray:
    """Decode, convert to grayscale, bilinearly resize to size x size and scale to [0, 1].

    Raises OSError (or PIL.UnidentifiedImageError) when the file cannot be decoded.
    """
    with PILImage.open(path) as raw:
        rgb = np.asarray(raw.convert("RGB"), dtype=np.float64) / 255.0
    gray = to_grayscale(rgb, weights)
    if gray.shape != (size, size):
        resized = PILImage.fromarray(gray.astype(np.float32)).resize(
            (size, size), PILImage.Resampling.BILINEAR
        )
        gray = np.asarray(resized, dtype=np.float64)
    return np.clip(gray, 0.0, 1.0)


def list_images(root: Path) -> List[Path]:
    """Image files directly inside ``root``, in lexicographic order."""
    root = Path(root)
    if not root.is_dir():
        raise InvalidArgumentError(f"image directory not found: {root}")
    return sorted(p for p in root.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def load_directory(
    root: Path,
    size: int,
    weights: Sequence[float] = LUMA_WEIGHTS,
) -> Tuple[List[str], np.ndarray, int]:
    """Decode every image in ``root``; returns (names, (M, size, size) stack, skipped count)."""
    names, images = [], []
    skipped = 0
    for path in list_images(root):
        try:
            images.append(load_image(path, size, weights))
            names.append(path.name)
        except (OSError, ValueError) as e:
            skipped += 1
            logger.warning(f"Skipping undecodable image {path.name}: {e}")
    stack = np.stack(images) if images else np.empty((0, size, size))
    return names, stack, skipped


def _synthetic_counts(spec: DatasetSpec) -> Tuple[int, int, int]:
    """Split counts for the synthetic source; unset counts share ``synthetic_count``
    in the full-scale proportions."""
    defaults = (DATASET_DEFAULTS["train_count"], DATASET_DEFAULTS["val_count"], DATASET_DEFAULTS["test_count"])
    explicit = (spec.train_count, spec.val_count, spec.test_count)
    if all(count is not None for count in explicit):
        return explicit
    total = spec.synthetic_count
    shares = [max(1, int(round(total * d / sum(defaults)))) for d in defaults]
    shares[0] = max(1, total - shares[1] - shares[2])
    return tuple(e if e is not None else s for e, s in zip(explicit, shares))


def load_dataset(spec: DatasetSpec) -> DatasetSplits:
    """Decode, shuffle by seed and split into train/val/test stacks.

    Without a root directory the synthetic generator stands in for the dataset.
    """
    if spec.root is None:
        counts = _synthetic_counts(spec)
        images = synthetic_images(sum(counts), spec.size, spec.seed)
        names = [f"synthetic_{i:05d}" for i in range(len(images))]
        skipped = 0
        logger.info(f"No data root configured; generated {len(images)} synthetic {spec.size}x{spec.size} images")
    else:
        counts = spec.split_counts()
        names, images, skipped = load_directory(spec.root, spec.size, spec.luma_weights)

    needed = sum(counts)
    if needed == 0:
        raise InvalidArgumentError("all split counts are zero")
    if needed > len(images):
        raise InvalidArgumentError(
            f"split counts {counts} need {needed} images but only {len(images)} could be decoded"
            + (f" ({skipped} skipped)" if skipped else "")
        )

    order = np.random.default_rng(spec.seed).permutation(len(images))[:needed]
    bounds = np.cumsum((0,) + tuple(counts))
    parts = [order[bounds[i]:bounds[i + 1]] for i in range(3)]
    splits = DatasetSplits(
        train=images[parts[0]],
        val=images[parts[1]],
        test=images[parts[2]],
        train_names=[names[i] for i in parts[0]],
        val_names=[names[i] for i in parts[1]],
        test_names=[names[i] for i in parts[2]],
        skipped=skipped,
    )
    logger.info(
        f"Dataset loaded: train={len(splits.train)}, val={len(splits.val)}, test={len(splits.test)}, "
        f"skipped={skipped}, size={spec.size}"
    )
    return splits


def load_frames(frame_dir: Path, size: int, weights: Sequence[float] = LUMA_WEIGHTS) -> Tuple[List[str], np.ndarray]:
    """Pre-extracted video frames in lexicographic order."""
    names, frames, skipped = load_directory(frame_dir, size, weights)
    if len(frames) == 0:
        raise InvalidArgumentError(
            f"no decodable frames in {frame_dir}" + (f" ({skipped} skipped)" if skipped else "")
        )
    return names, frames


def _blob_field(rng: np.random.Generator, size: int) -> np.ndarray:
    field = gaussian_filter(rng.standard_normal((size, size)), sigma=size / 8.0, mode="wrap")
    low, high = field.min(), field.max()
    if high - low <= 0.0:
        return np.zeros((size, size))
    return (field - low) / (high - low)


def _draw_shape(canvas: np.ndarray, rng: np.random.Generator) -> None:
    size = canvas.shape[0]
    rows, cols = np.ogrid[:size, :size]
    cy, cx = rng.uniform(0.2, 0.8, size=2) * size
    extent = rng.uniform(0.08, 0.3) * size
    value = rng.uniform(0.0, 1.0)
    if rng.random() < 0.5:
        mask = (rows - cy) ** 2 + (cols - cx) ** 2 <= extent ** 2
    else:
        aspect = rng.uniform(0.5, 2.0)
        mask = (np.abs(rows - cy) <= extent) & (np.abs(cols - cx) <= extent * aspect)
    canvas[mask] = value


def synthetic_images(count: int, size: int, seed: int = 0) -> np.ndarray:
    """Smooth random blobs overlaid with a few discs and rectangles; (count, size, size) in [0, 1]."""
    if count < 0 or size < 1:
        raise InvalidArgumentError(f"need count >= 0 and size >= 1, got count={count}, size={size}")
    images = np.empty((count, size, size))
    for index in range(count):
        rng = np.random.default_rng([int(seed), index])
        canvas = 0.2 + 0.6 * _blob_field(rng, size)
        for _ in range(rng.integers(1, 4)):
            _draw_shape(canvas, rng)
        images[index] = np.clip(gaussian_filter(canvas, sigma=0.7), 0.0, 1.0)
    return images


def write_synthetic_dataset(root: Path, count: int, size: int, seed: int = 0) -> List[Path]:
    """Write synthetic images as 8-bit grayscale PNG files."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    paths = []
    for index, image in enumerate(synthetic_images(count, size, seed)):
        path = root / f"synthetic_{index:05d}.png"
        save_png(image, path)
        paths.append(path)
    logger.info(f"Synthetic dataset written: {count} images in {root}")
    return paths


def save_png(pixels: np.ndarray, path: Path) -> Path:
    values = np.round(np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
    PILImage.fromarray(values).save(path)
    return Path(path)
