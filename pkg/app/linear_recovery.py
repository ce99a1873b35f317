"""Closed-form minimum l2-norm reconstruction, the generator's input producer."""
import logging
from typing import Optional

import numpy as np
import scipy.linalg

from app.errors import InvalidArgumentError, SolverFailureError
from app.models.imaging import Image, MeasurementVector, ScanningBasis
from app.models.recovery import EffectiveMatrix, SparsifyingBasis

logger = logging.getLogger(__name__)

GRAM_JITTER = 1e-10
MAX_CONDITION = 1e15


def effective_matrix(phi: ScanningBasis, psi: SparsifyingBasis) -> EffectiveMatrix:
    """Theta = Phi Psi. Row i of Theta is (Psi^T phi_i)^T."""
    if phi.n != psi.n:
        raise InvalidArgumentError(f"scanning basis has N={phi.n} but sparsifying basis has N={psi.n}")
    if psi.kind == "identity":
        theta = phi.rows
    else:
        theta = psi.analyze(phi.rows.T).T
    return EffectiveMatrix(theta=theta, basis_kind=psi.kind, seed=phi.seed)


class MinNormSolver:
    """Solves Theta s = y for the minimum-norm s, reusing one Gram factorization.

    s = Theta^T (Theta Theta^T + eps I)^-1 y, with the K x K Gram matrix factored by Cholesky.
    """

    def __init__(self, theta: np.ndarray, jitter: float = GRAM_JITTER):
        self.theta = np.asarray(theta, dtype=np.float64)
        k = self.theta.shape[0]
        gram = self.theta @ self.theta.T + jitter * np.eye(k)
        try:
            self._factor = scipy.linalg.cho_factor(gram, lower=True, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as e:
            estimate = _condition_estimate(gram)
            raise SolverFailureError(
                f"Gram matrix is numerically singular (condition estimate {estimate:.3e}): {e}",
                condition_estimate=estimate,
            ) from e

        diagonal = np.abs(np.diag(self._factor[0]))
        self.condition_estimate = float((diagonal.max() / diagonal.min()) ** 2)
        if not np.isfinite(self.condition_estimate) or self.condition_estimate > MAX_CONDITION:
            raise SolverFailureError(
                f"Gram matrix is numerically singular (condition estimate {self.condition_estimate:.3e})",
                condition_estimate=self.condition_estimate,
            )

    @property
    def k(self) -> int:
        return int(self.theta.shape[0])

    def gram_solve(self, y: np.ndarray) -> np.ndarray:
        """(Theta Theta^T + eps I)^-1 y for a length-K vector or K x M columns."""
        return scipy.linalg.cho_solve(self._factor, y)

    def solve(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if y.shape[0] != self.k:
            raise InvalidArgumentError(f"measurement length {y.shape[0]} does not match K={self.k}")
        return self.theta.T @ self.gram_solve(y)


def _condition_estimate(gram: np.ndarray) -> float:
    try:
        return float(np.linalg.cond(gram))
    except np.linalg.LinAlgError:
        return float("inf")


def min_norm_solve(theta: EffectiveMatrix, y: MeasurementVector, solver: Optional[MinNormSolver] = None) -> np.ndarray:
    if y.k != theta.k:
        raise InvalidArgumentError(f"measurement length {y.k} does not match K={theta.k}")
    solver = solver or MinNormSolver(theta.theta)
    return solver.solve(y.values)


def l2_estimate(
    phi: ScanningBasis,
    psi: SparsifyingBasis,
    y: np.ndarray,
    solver: Optional[MinNormSolver] = None,
) -> np.ndarray:
    """Unclipped Psi s_hat for a length-K vector or K x M columns; returns N or N x M."""
    if solver is None:
        solver = MinNormSolver(effective_matrix(phi, psi).theta)
    return psi.synthesize(solver.solve(y))


def l2_reconstruct(
    phi: ScanningBasis,
    psi: SparsifyingBasis,
    y: MeasurementVector,
    solver: Optional[MinNormSolver] = None,
) -> Image:
    """x_noisy = Psi min_norm_solve(Phi Psi, y), clipped to [0, 1]."""
    if y.k != phi.k:
        raise InvalidArgumentError(f"measurement length {y.k} does not match K={phi.k}")
    if psi.n != phi.n:
        raise InvalidArgumentError(f"scanning basis has N={phi.n} but sparsifying basis has N={psi.n}")
    estimate = l2_estimate(phi, psi, y.values, solver)
    return Image.from_vector(estimate, psi.height, psi.width, clip=True)


def clipped_fraction(estimate: np.ndarray) -> float:
    """Share of entries that clipping to [0, 1] changes."""
    estimate = np.asarray(estimate)
    return float(np.mean((estimate < 0.0) | (estimate > 1.0)))
