from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.fft import dctn, idctn

from app.models.imaging import Image


class SparsifyingBasis(BaseModel):
    """Orthonormal N x N basis Psi, kept implicit; x = Psi s."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["identity", "dct2d"] = "identity"
    height: int = Field(..., ge=1)
    width: int = Field(..., ge=1)

    @property
    def n(self) -> int:
        return self.height * self.width

    def synthesize(self, coefficients: np.ndarray) -> np.ndarray:
        """Psi s for a length-N vector or an N x M stack of columns."""
        s = np.asarray(coefficients, dtype=np.float64)
        if self.kind == "identity":
            return s
        columns = s.reshape(self.height, self.width, -1)
        return idctn(columns, axes=(0, 1), norm="ortho").reshape(s.shape)

    def analyze(self, signal: np.ndarray) -> np.ndarray:
        """Psi^T x for a length-N vector or an N x M stack of columns."""
        x = np.asarray(signal, dtype=np.float64)
        if self.kind == "identity":
            return x
        columns = x.reshape(self.height, self.width, -1)
        return dctn(columns, axes=(0, 1), norm="ortho").reshape(x.shape)

    def matrix(self, check: bool = True) -> np.ndarray:
        psi = self.synthesize(np.eye(self.n))
        if check and self.n <= 4096:
            gram = psi.T @ psi
            if np.max(np.abs(gram - np.eye(self.n))) > 1e-10:
                raise ValueError(f"{self.kind} basis is not orthonormal")
        return psi


class EffectiveMatrix(BaseModel):
    """Theta = Phi Psi together with where it came from."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    theta: np.ndarray = Field(..., description="K x N effective sensing matrix")
    basis_kind: str = Field("identity", description="Sparsifying basis the matrix was built with")
    seed: Optional[int] = Field(None, description="Scanning basis permutation seed")

    @field_validator("theta", mode="before")
    def validate_theta(cls, v):
        theta = np.asarray(v, dtype=np.float64)
        if theta.ndim != 2 or theta.shape[0] < 1 or theta.shape[1] < 1:
            raise ValueError("effective matrix must be a non-empty 2-D array")
        if not np.all(np.isfinite(theta)):
            raise ValueError("effective matrix entries must be finite")
        if theta.flags.writeable:
            theta = theta.copy()
            theta.setflags(write=False)
        return theta

    @property
    def k(self) -> int:
        return int(self.theta.shape[0])

    @property
    def n(self) -> int:
        return int(self.theta.shape[1])


class IterativeConfig(BaseModel):
    """Stopping rule and step parameters shared by the iterative baselines."""

    max_iters: int = Field(500, ge=1, description="Iteration cap")
    tolerance: float = Field(1e-6, gt=0.0, description="Relative residual / iterate-change threshold")
    step_size: Optional[float] = Field(None, gt=0.0, description="ISTA step; None means 0.9 / ||Theta||_2^2")
    l1_weight: float = Field(1e-3, ge=0.0, description="ISTA l1 penalty weight")
    accelerated: bool = Field(False, description="Use the FISTA momentum sequence")

    @classmethod
    def for_method(cls, method: str, **overrides) -> "IterativeConfig":
        defaults = {"max_iters": 2000} if method == "ista" else {"max_iters": 500}
        defaults.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**defaults)


class IterativeResult(BaseModel):
    """Reconstructed image plus convergence bookkeeping."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    image: Image
    iterations: int
    converged: bool
    residual_history: List[float] = Field(default_factory=list)


class SparseResult(BaseModel):
    """Coefficient vector from the l1 solver."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    coefficients: np.ndarray
    iterations: int
    converged: bool
    step_size: float
    objective_history: List[float] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_coefficients(self):
        if self.coefficients.ndim != 1:
            raise ValueError("coefficients must be a vector")
        return self
