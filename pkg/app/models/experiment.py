from pathlib import Path
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, computed_field, field_validator, model_validator

from app.information import DATASET_DEFAULTS, DMD_MODULATION_RATE, SWEEP_DEFAULTS


class DatasetSpec(BaseModel):
    root: Optional[Path] = Field(None, description="Image directory; None selects the synthetic generator")
    size: int = Field(DATASET_DEFAULTS["image_size"], description="Target side length (power of two)")
    train_count: Optional[int] = Field(None, ge=0)
    val_count: Optional[int] = Field(None, ge=0)
    test_count: Optional[int] = Field(None, ge=0)
    scale: float = Field(1.0, gt=0.0, le=1.0, description="Fraction applied to the full-scale split counts")
    luma_weights: tuple[float, float, float] = tuple(DATASET_DEFAULTS["luma_weights"])
    seed: int = 0
    synthetic_count: int = Field(200, ge=1)

    @field_validator("size")
    def validate_size(cls, v):
        if v < 1 or v & (v - 1):
            raise ValueError(f"target size must be a power of two, got {v}")
        return v

    def split_counts(self) -> tuple[int, int, int]:
        """Explicit counts win; otherwise the full-scale defaults times ``scale``."""
        def pick(explicit, default):
            return explicit if explicit is not None else int(round(default * self.scale))

        return (
            pick(self.train_count, DATASET_DEFAULTS["train_count"]),
            pick(self.val_count, DATASET_DEFAULTS["val_count"]),
            pick(self.test_count, DATASET_DEFAULTS["test_count"]),
        )


class DatasetSplits(BaseModel):
    """Image stacks of shape (count, H, W) in [0, 1]."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    train_names: List[str] = Field(default_factory=list)
    val_names: List[str] = Field(default_factory=list)
    test_names: List[str] = Field(default_factory=list)
    skipped: int = 0


class SweepSpec(BaseModel):
    sampling_rates: List[float] = Field(default_factory=lambda: list(SWEEP_DEFAULTS["sampling_rates"]))
    noise_levels: List[float] = Field(default_factory=lambda: list(SWEEP_DEFAULTS["noise_levels"]))
    methods: List[str] = Field(default_factory=lambda: list(SWEEP_DEFAULTS["methods"]))
    seeds: List[int] = Field(default_factory=lambda: [0])

    @field_validator("sampling_rates")
    def validate_rates(cls, v):
        if not v or any(not 0.0 < rate <= 1.0 for rate in v):
            raise ValueError("sampling rates must lie in (0, 1]")
        return v

    @field_validator("noise_levels")
    def validate_levels(cls, v):
        if not v or any(level < 0.0 for level in v):
            raise ValueError("noise levels must be non-negative")
        return v

    @field_validator("seeds")
    def validate_seeds(cls, v):
        if not v:
            raise ValueError("at least one seed is required")
        return v


class TimingModel(BaseModel):
    method: str
    k: int = Field(..., ge=1)
    n: int = Field(..., ge=1)
    dmd_rate: float = Field(DMD_MODULATION_RATE, gt=0.0, description="Patterns per second")
    reconstruction_seconds: float = Field(..., gt=0.0)

    @computed_field
    @property
    def sr(self) -> float:
        return self.k / self.n

    @computed_field
    @property
    def acquisition_seconds(self) -> float:
        return self.k / self.dmd_rate

    @computed_field
    @property
    def total_seconds(self) -> float:
        return self.acquisition_seconds + self.reconstruction_seconds

    @computed_field
    @property
    def fps(self) -> float:
        return 1.0 / self.total_seconds


class QualityScore(BaseModel):
    psnr_db: float
    ssim: Optional[float] = Field(None, ge=-1.0, le=1.0)
    mse: float = Field(..., ge=0.0)


class ReportRow(BaseModel):
    method: str
    sr: float
    noise_level: float
    mean_psnr: float
    std_psnr: float
    mean_ssim: Optional[float]
    std_ssim: Optional[float]
    n: int
    extractor_mode: str = "none"
    seed: int


class QualityRecord(BaseModel):
    """One JSON line per reconstructed image."""

    image: str
    method: str
    sr: float
    noise_level: float
    psnr_db: float
    ssim: Optional[float]
    clipped_fraction: float = Field(0.0, ge=0.0, le=1.0, description="Share of pixels clipped to [0, 1]")


class Reconstruction(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    pixels: np.ndarray
    method: str
    seconds: float = Field(..., ge=0.0)
    clipped_fraction: float = Field(0.0, ge=0.0, le=1.0)
    iterations: Optional[int] = None
    converged: Optional[bool] = None


class FrameRun(BaseModel):
    """Ordered per-frame reconstructions with their wall-clock timings."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    names: List[str]
    frames: List[np.ndarray]
    seconds: List[float]

    @model_validator(mode="after")
    def check_lengths(self):
        if not len(self.names) == len(self.frames) == len(self.seconds):
            raise ValueError("frame names, frames and timings must align")
        return self
