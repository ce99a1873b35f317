import math
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.errors import InvalidArgumentError


class GeneratorConfig(BaseModel):
    features: int = Field(64, ge=1, description="Channel width F")
    blocks: int = Field(14, ge=0, description="Residual block count B")
    skip_enabled: bool = Field(True, description="Residual and global skip connections (ablation flag)")
    height: int = Field(64, ge=1)
    width: int = Field(64, ge=1)


class DiscriminatorConfig(BaseModel):
    channels: int = Field(64, ge=1, description="Width of the first stage; doubled per stage")
    stages: int = Field(4, ge=1, description="Number of stride-2 downsampling stages")
    hidden: int = Field(1024, ge=1, description="Width of the dense layer before the output")


class ExtractorConfig(BaseModel):
    layer: int = Field(11, ge=1, description="Convolution index k whose activation is compared")
    source: Literal["file", "random"] = "random"
    path: Optional[str] = Field(None, description="Weight file for source='file'")
    width_divisor: int = Field(1, ge=1, description="Divides every channel count; 1 is the full topology")
    seed: int = 0

    @classmethod
    def parse(cls, spec: str, **kwargs) -> "ExtractorConfig":
        """Build from a CLI value: 'random' or 'file:<path>'."""
        if spec == "random":
            return cls(source="random", **kwargs)
        if spec.startswith("file:") and len(spec) > 5:
            return cls(source="file", path=spec[5:], **kwargs)
        raise InvalidArgumentError(f"extractor must be 'random' or 'file:<path>', got {spec!r}")

    @property
    def mode(self) -> str:
        return "file" if self.source == "file" else "random"


class TrainConfig(BaseModel):
    """Optimization hyperparameters for the adversarial refiner."""

    learning_rate: float = Field(8e-5, ge=0.0)
    batch_size: int = Field(64, ge=1)
    epochs: int = Field(150, ge=1)
    weight_decay: float = Field(5e-4, ge=0.0)
    lambda_sim: float = Field(6e-3, ge=0.0)
    lambda_adv: float = Field(1e-3, ge=0.0)
    optimizer: Literal["adam", "sgd"] = "adam"
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = Field(1e-8, gt=0.0)
    momentum: float = Field(0.9, ge=0.0)
    seed: int = 0
    dtype: Literal["float32", "float64"] = "float32"
    noise_sigma: float = Field(0.0, ge=0.0, description="Measurement noise used while training")
    checkpoint_every: int = Field(10, ge=1)
    generator: GeneratorConfig = Field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = Field(default_factory=DiscriminatorConfig)
    extractor: ExtractorConfig = Field(default_factory=ExtractorConfig)

    @field_validator("lambda_sim", "lambda_adv", "learning_rate")
    def validate_finite(cls, v):
        if not math.isfinite(v):
            raise ValueError("must be finite")
        return v


class LossBreakdown(BaseModel):
    mse: float
    sim: float
    adv: float
    total: float


class EpochRecord(BaseModel):
    epoch: int
    mse: float
    sim: float
    adv: float
    total: float
    d_loss: float
    val_psnr: float
    val_ssim: Optional[float] = None

    def log_line(self) -> str:
        ssim = "nan" if self.val_ssim is None else f"{self.val_ssim:.4f}"
        return (
            f"epoch={self.epoch} l_mse={self.mse:.6g} l_sim={self.sim:.6g} l_adv={self.adv:.6g} "
            f"val_psnr={self.val_psnr:.4f} val_ssim={ssim}"
        )


class Checkpoint(BaseModel):
    """Immutable snapshot of both networks and the training history."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    config: TrainConfig
    generator_state: Dict[str, object]
    discriminator_state: Dict[str, object]
    history: List[EpochRecord] = Field(default_factory=list)
