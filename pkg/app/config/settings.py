from pathlib import Path
from typing import Any, Dict, Literal, Optional

from dotenv import dotenv_values
from pydantic import Field
from pydantic_settings import BaseSettings

from app.errors import InvalidArgumentError
from app.information import DATASET_DEFAULTS, DMD_MODULATION_RATE


class Settings(BaseSettings):
    """Global run configuration"""

    seed: int = 0
    out_dir: Path = Path("out")
    sr: float = Field(0.25, gt=0.0, le=1.0)
    noise_level: float = Field(0.0, ge=0.0)
    image_size: int = DATASET_DEFAULTS["image_size"]
    method: str = "l2"
    extractor: str = "random"
    dmd_rate: float = Field(DMD_MODULATION_RATE, gt=0.0)
    workers: int = Field(1, ge=1)
    log_level: str = "INFO"

    class Config:
        env_file = ".env"
        env_prefix = "SPI_"
        extra = "ignore"


class SolverSettings(BaseSettings):
    """Iterative baseline defaults"""

    max_iters: int = Field(500, ge=1)
    ista_max_iters: int = Field(2000, ge=1)
    tolerance: float = Field(1e-6, gt=0.0)
    l1_weight: float = Field(1e-3, ge=0.0)
    step_scale: float = Field(0.9, gt=0.0, le=1.0)
    accelerated: bool = False
    sparse_basis: Literal["identity", "dct2d"] = "dct2d"

    class Config:
        env_file = ".env"
        env_prefix = "SPI_"
        extra = "ignore"


class TrainSettings(BaseSettings):
    """GAN training and network defaults"""

    learning_rate: float = Field(8e-5, ge=0.0)
    batch_size: int = Field(64, ge=1)
    epochs: int = Field(150, ge=1)
    weight_decay: float = Field(5e-4, ge=0.0)
    lambda_sim: float = 6e-3
    lambda_adv: float = 1e-3
    optimizer: Literal["adam", "sgd"] = "adam"
    features: int = Field(64, ge=1)
    blocks: int = Field(14, ge=0)
    skip_enabled: bool = True
    disc_channels: int = Field(64, ge=1)
    disc_stages: int = Field(4, ge=1)
    feature_layer: int = Field(11, ge=1)
    extractor_width_divisor: int = Field(1, ge=1)
    dtype: Literal["float32", "float64"] = "float32"
    checkpoint_every: int = Field(10, ge=1)

    class Config:
        env_file = ".env"
        env_prefix = "SPI_"
        extra = "ignore"


class DatasetSettings(BaseSettings):
    """Dataset ingestion defaults"""

    data_dir: Optional[Path] = None
    train_count: Optional[int] = None
    val_count: Optional[int] = None
    test_count: Optional[int] = None
    scale: float = Field(0.01, gt=0.0, le=1.0)
    synthetic_count: int = Field(200, ge=1)

    class Config:
        env_file = ".env"
        env_prefix = "SPI_"
        extra = "ignore"


SETTINGS_CLASSES = (Settings, SolverSettings, TrainSettings, DatasetSettings)


def read_config_file(path: Path) -> Dict[str, str]:
    """Parse a flat key=value config file (``#`` starts a comment)."""
    if not Path(path).is_file():
        raise InvalidArgumentError(f"config file not found: {path}")
    values = {key.strip().lower(): value for key, value in dotenv_values(path).items() if value is not None}
    known = set().union(*(cls.model_fields for cls in SETTINGS_CLASSES))
    unknown = sorted(set(values) - known)
    if unknown:
        raise InvalidArgumentError(f"unknown config keys: {', '.join(unknown)}")
    return values


def load_settings(config_file: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None):
    """Build all settings objects with flag > config file > environment > default precedence."""
    file_values = read_config_file(config_file) if config_file else {}
    cli_values = {key: value for key, value in (overrides or {}).items() if value is not None}

    built = []
    for cls in SETTINGS_CLASSES:
        fields = cls.model_fields
        kwargs = {key: value for key, value in file_values.items() if key in fields}
        kwargs.update({key: value for key, value in cli_values.items() if key in fields})
        try:
            built.append(cls(**kwargs))
        except ValueError as e:
            raise InvalidArgumentError(f"invalid configuration: {e}") from e
    return tuple(built)


settings = Settings()
solver_settings = SolverSettings()
train_settings = TrainSettings()
dataset_settings = DatasetSettings()
