from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


def _frozen_array(value, dtype=np.float64) -> np.ndarray:
    array = np.array(value, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


class Image(BaseModel):
    """Grayscale H x W raster with pixels in [0, 1], vectorized row-major."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    pixels: np.ndarray = Field(..., description="H x W array of intensities in [0, 1]")

    @field_validator("pixels", mode="before")
    def validate_pixels(cls, v):
        array = _frozen_array(v)
        if array.ndim != 2 or min(array.shape) < 1:
            raise ValueError(f"image must be a non-empty 2-D array, got shape {array.shape}")
        if not np.all(np.isfinite(array)):
            raise ValueError("image pixels must be finite")
        if array.min() < 0.0 or array.max() > 1.0:
            raise ValueError("image pixels must lie in [0, 1]")
        return array

    @classmethod
    def from_array(cls, values, clip: bool = False) -> "Image":
        array = np.asarray(values, dtype=np.float64)
        if clip:
            array = np.clip(array, 0.0, 1.0)
        return cls(pixels=array)

    @classmethod
    def from_vector(cls, values, height: int, width: int, clip: bool = False) -> "Image":
        return cls.from_array(np.asarray(values, dtype=np.float64).reshape(height, width), clip=clip)

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def n(self) -> int:
        return self.height * self.width

    def vector(self) -> np.ndarray:
        return self.pixels.reshape(-1)


class ScanningBasis(BaseModel):
    """K x N row-normalized, permuted 0/1 Walsh patterns."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    rows: np.ndarray = Field(..., description="K x N pattern matrix, one unit-norm pattern per row")
    seed: Optional[int] = Field(None, description="Row permutation seed (unknown for loaded files)")

    @field_validator("rows", mode="before")
    def validate_rows(cls, v):
        rows = _frozen_array(v)
        if rows.ndim != 2:
            raise ValueError("scanning basis must be a 2-D matrix")
        k, n = rows.shape
        if not 1 <= k <= n:
            raise ValueError(f"need 1 <= K <= N, got K={k}, N={n}")
        if not np.all(np.isfinite(rows)):
            raise ValueError("scanning basis entries must be finite")
        norms = np.linalg.norm(rows, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("every scanning pattern must have unit Euclidean norm")
        return rows

    @property
    def k(self) -> int:
        return int(self.rows.shape[0])

    @property
    def n(self) -> int:
        return int(self.rows.shape[1])

    @property
    def sampling_rate(self) -> float:
        return self.k / self.n


class MeasurementVector(BaseModel):
    """Photodiode readings y = Phi x + q."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray = Field(..., description="Length-K measurement vector")
    noise_sigma: float = Field(0.0, ge=0.0, description="Standard deviation of the additive noise")
    noise_level: float = Field(0.0, ge=0.0, description="Noise standard deviation divided by pixel count")

    @field_validator("values", mode="before")
    def validate_values(cls, v):
        values = _frozen_array(v).reshape(-1)
        if values.size < 1 or not np.all(np.isfinite(values)):
            raise ValueError("measurements must be a non-empty finite vector")
        return values

    @model_validator(mode="after")
    def check_noise_fields(self):
        if self.noise_sigma > 0.0 and self.noise_level == 0.0:
            raise ValueError("noise_level must be recorded when noise_sigma > 0")
        return self

    @property
    def k(self) -> int:
        return int(self.values.shape[0])
