import logging
import time
from typing import Optional

import numpy as np
import torch

from app.baselines import ap_reconstruct, cgd_reconstruct, dgi_reconstruct, sparse_reconstruct
from app.errors import CheckpointError, InvalidArgumentError
from app.information import METHODS
from app.linear_recovery import MinNormSolver, clipped_fraction, effective_matrix
from app.models.experiment import Reconstruction
from app.models.imaging import MeasurementVector, ScanningBasis
from app.models.recovery import IterativeConfig, SparsifyingBasis
from app.networks import Generator

logger = logging.getLogger(__name__)


class Reconstructor:
    """One scanning basis, one method; factorizations are built once and reused per frame."""

    def __init__(
        self,
        phi: ScanningBasis,
        method: str,
        solver_cfg: Optional[IterativeConfig] = None,
        psi: Optional[SparsifyingBasis] = None,
        generator: Optional[Generator] = None,
        shape: Optional[tuple[int, int]] = None,
    ):
        if method not in METHODS:
            raise InvalidArgumentError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
        if method == "gan" and generator is None:
            raise CheckpointError("the gan method needs a trained checkpoint")

        self.phi = phi
        self.method = method
        self.shape = shape or _square(phi.n)
        self.solver_cfg = solver_cfg or IterativeConfig.for_method(method)
        self.generator = generator.eval() if generator is not None else None

        default_kind = "dct2d" if method == "ista" else "identity"
        self.psi = psi or SparsifyingBasis(kind=default_kind, height=self.shape[0], width=self.shape[1])
        if self.psi.n != phi.n:
            raise InvalidArgumentError(f"sparsifying basis has N={self.psi.n}, scanning basis has N={phi.n}")

        self.solver = None
        if method in ("l2", "gan"):
            self.solver = MinNormSolver(effective_matrix(phi, self.psi).theta)
        elif method == "ap":
            self.solver = MinNormSolver(phi.rows)

    def l2_stage(self, y: MeasurementVector) -> np.ndarray:
        """Unclipped Psi s_hat as an H x W array."""
        return self.psi.synthesize(self.solver.solve(y.values)).reshape(self.shape)

    def _refine(self, noisy: np.ndarray) -> np.ndarray:
        dtype = next(self.generator.parameters()).dtype
        batch = torch.as_tensor(noisy[None, None], dtype=dtype)
        with torch.no_grad():
            return self.generator(batch)[0, 0].cpu().numpy().astype(np.float64)

    def reconstruct(self, y: MeasurementVector) -> Reconstruction:
        if y.k != self.phi.k:
            raise InvalidArgumentError(f"measurement length {y.k} does not match K={self.phi.k}")
        start = time.perf_counter()
        iterations = converged = None
        clipped = 0.0

        if self.method in ("l2", "gan"):
            estimate = self.l2_stage(y)
            clipped = clipped_fraction(estimate)
            pixels = np.clip(estimate, 0.0, 1.0)
            if self.method == "gan":
                pixels = self._refine(pixels)
        elif self.method == "dgi":
            pixels = dgi_reconstruct(self.phi, y, self.shape).pixels
        else:
            if self.method == "cgd":
                result = cgd_reconstruct(self.phi, y, self.solver_cfg, self.shape)
            elif self.method == "ap":
                result = ap_reconstruct(self.phi, y, self.solver_cfg, self.shape, self.solver)
            else:
                result = sparse_reconstruct(self.phi, self.psi, y, self.solver_cfg)
            pixels = result.image.pixels
            iterations, converged = result.iterations, result.converged

        seconds = time.perf_counter() - start
        if clipped > 0.0:
            logger.debug(f"{self.method}: clipped {clipped:.2%} of pixels to [0, 1]")
        return Reconstruction(
            pixels=np.asarray(pixels, dtype=np.float64),
            method=self.method,
            seconds=seconds,
            clipped_fraction=clipped,
            iterations=iterations,
            converged=converged,
        )


def _square(n: int) -> tuple[int, int]:
    side = int(round(np.sqrt(n)))
    if side * side != n:
        raise InvalidArgumentError(f"N={n} is not square; pass the image shape explicitly")
    return side, side
