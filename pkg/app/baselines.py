"""Classical reconstruction baselines: conjugate gradients, alternating projections,
l1 shrinkage (ISTA/FISTA) and differential ghost imaging."""
import logging
from typing import Optional

import numpy as np

from app.errors import DegenerateBasisError, InvalidArgumentError
from app.linear_recovery import MinNormSolver, effective_matrix
from app.models.imaging import Image, MeasurementVector, ScanningBasis
from app.models.recovery import (
    EffectiveMatrix,
    IterativeConfig,
    IterativeResult,
    SparseResult,
    SparsifyingBasis,
)

logger = logging.getLogger(__name__)

STEP_BOUND_SLACK = 1e-6


def _check_dimensions(phi: ScanningBasis, y: MeasurementVector) -> None:
    if y.k != phi.k:
        raise InvalidArgumentError(f"measurement length {y.k} does not match K={phi.k}")


def _image_shape(n: int, shape: Optional[tuple[int, int]]) -> tuple[int, int]:
    if shape is not None:
        if shape[0] * shape[1] != n:
            raise InvalidArgumentError(f"image shape {shape} does not hold N={n} pixels")
        return shape
    side = int(round(np.sqrt(n)))
    if side * side != n:
        raise InvalidArgumentError(f"N={n} is not square; pass the image shape explicitly")
    return side, side


def cgd_reconstruct(
    phi: ScanningBasis,
    y: MeasurementVector,
    cfg: IterativeConfig,
    shape: Optional[tuple[int, int]] = None,
) -> IterativeResult:
    """Conjugate-direction solve of Phi^T Phi x = Phi^T y from x0 = 0.

    Uses the conjugate-residual recurrence, so the normal-equation residual
    ||Phi^T (Phi x_t - y)|| never increases.
    """
    _check_dimensions(phi, y)
    height, width = _image_shape(phi.n, shape)
    a = phi.rows

    def normal(v):
        return a.T @ (a @ v)

    b = a.T @ y.values
    x = np.zeros(phi.n)
    b_norm = float(np.linalg.norm(b))
    history = [b_norm]
    if b_norm == 0.0:
        return IterativeResult(image=Image.from_vector(x, height, width), iterations=0, converged=True, residual_history=history)

    r = b.copy()
    p = r.copy()
    ar = normal(r)
    ap = ar.copy()
    rar = float(r @ ar)
    converged = False
    iterations = 0
    best_x, best_residual = x.copy(), b_norm

    for iterations in range(1, cfg.max_iters + 1):
        apap = float(ap @ ap)
        if apap == 0.0 or rar == 0.0:
            converged = True
            break
        alpha = rar / apap
        x = x + alpha * p
        r = r - alpha * ap
        residual = float(np.linalg.norm(r))
        history.append(residual)
        if residual < best_residual:
            best_x, best_residual = x.copy(), residual
        if residual <= cfg.tolerance * b_norm:
            converged = True
            break
        ar = normal(r)
        rar_next = float(r @ ar)
        beta = rar_next / rar
        rar = rar_next
        p = r + beta * p
        ap = ar + beta * ap

    if not converged:
        logger.warning(f"CGD stopped after {iterations} iterations, relative residual {best_residual / b_norm:.3e}")
    return IterativeResult(
        image=Image.from_vector(best_x, height, width, clip=True),
        iterations=iterations,
        converged=converged,
        residual_history=history,
    )


def ap_reconstruct(
    phi: ScanningBasis,
    y: MeasurementVector,
    cfg: IterativeConfig,
    shape: Optional[tuple[int, int]] = None,
    solver: Optional[MinNormSolver] = None,
) -> IterativeResult:
    """Alternate the projection onto {x : Phi x = y} with the projection onto [0, 1]^N."""
    _check_dimensions(phi, y)
    height, width = _image_shape(phi.n, shape)
    solver = solver or MinNormSolver(phi.rows)
    a = phi.rows

    x = np.zeros(phi.n)
    history = []
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_iters + 1):
        x_next = np.clip(x + solver.solve(y.values - a @ x), 0.0, 1.0)
        change = float(np.linalg.norm(x_next - x))
        x = x_next
        history.append(float(np.linalg.norm(a @ x - y.values)))
        if change <= cfg.tolerance * max(1.0, float(np.linalg.norm(x))):
            converged = True
            break

    if not converged:
        logger.warning(f"AP stopped after {iterations} iterations without meeting the tolerance")
    return IterativeResult(
        image=Image.from_vector(x, height, width),
        iterations=iterations,
        converged=converged,
        residual_history=history,
    )


def power_iteration_norm(theta: np.ndarray, iters: int = 100, seed: int = 0) -> float:
    """Estimate ||Theta||_2^2, the Lipschitz constant of the least-squares gradient."""
    v = np.random.default_rng(seed).standard_normal(theta.shape[1])
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(iters):
        w = theta.T @ (theta @ v)
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0
        v = w / norm
        if abs(norm - estimate) <= 1e-12 * norm:
            estimate = norm
            break
        estimate = norm
    return estimate


def soft_threshold(v: np.ndarray, threshold: float) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - threshold, 0.0)


def l1_objective(theta: np.ndarray, y: np.ndarray, s: np.ndarray, l1_weight: float) -> float:
    residual = theta @ s - y
    return 0.5 * float(residual @ residual) + l1_weight * float(np.abs(s).sum())


def ista_reconstruct(theta: EffectiveMatrix, y: MeasurementVector, cfg: IterativeConfig) -> SparseResult:
    """Iterative shrinkage-thresholding for min 1/2 ||Theta s - y||^2 + l1_weight ||s||_1 from s0 = 0.

    With ``cfg.accelerated`` the FISTA momentum sequence is used; the objective is
    then no longer guaranteed to decrease every iteration.
    """
    if y.k != theta.k:
        raise InvalidArgumentError(f"measurement length {y.k} does not match K={theta.k}")
    a = theta.theta
    lipschitz = power_iteration_norm(a)
    if lipschitz == 0.0:
        raise DegenerateBasisError("effective matrix is zero")
    step = cfg.step_size if cfg.step_size is not None else 0.9 / lipschitz
    if step > (1.0 + STEP_BOUND_SLACK) / lipschitz:
        raise InvalidArgumentError(f"step size {step:.4g} exceeds 1/||Theta||^2 = {1.0 / lipschitz:.4g}")

    threshold = step * cfg.l1_weight
    s = np.zeros(theta.n)
    z = s.copy()
    t = 1.0
    history = [l1_objective(a, y.values, s, cfg.l1_weight)]
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_iters + 1):
        point = z if cfg.accelerated else s
        s_next = soft_threshold(point - step * (a.T @ (a @ point - y.values)), threshold)
        if cfg.accelerated:
            t_next = (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
            z = s_next + ((t - 1.0) / t_next) * (s_next - s)
            t = t_next
        change = float(np.linalg.norm(s_next - s))
        s = s_next
        history.append(l1_objective(a, y.values, s, cfg.l1_weight))
        if change <= cfg.tolerance * max(1.0, float(np.linalg.norm(s))):
            converged = True
            break

    return SparseResult(
        coefficients=s,
        iterations=iterations,
        converged=converged,
        step_size=step,
        objective_history=history,
    )


def sparse_reconstruct(
    phi: ScanningBasis,
    psi: SparsifyingBasis,
    y: MeasurementVector,
    cfg: IterativeConfig,
) -> IterativeResult:
    """Image Psi s_hat from the l1 solve in the sparsifying basis."""
    result = ista_reconstruct(effective_matrix(phi, psi), y, cfg)
    estimate = psi.synthesize(result.coefficients)
    return IterativeResult(
        image=Image.from_vector(estimate, psi.height, psi.width, clip=True),
        iterations=result.iterations,
        converged=result.converged,
        residual_history=result.objective_history,
    )


def dgi_estimate(phi: ScanningBasis, y: MeasurementVector) -> np.ndarray:
    """<y_i Phi_i> - (<y_i> / <S_i>) <S_i Phi_i> before normalization; S_i is the sum of pattern i."""
    _check_dimensions(phi, y)
    if phi.k < 2:
        raise InvalidArgumentError(f"differential ghost imaging needs K >= 2 patterns, got {phi.k}")
    patterns = phi.rows
    sums = patterns.sum(axis=1)
    mean_sum = float(sums.mean())
    if mean_sum == 0.0:
        raise DegenerateBasisError("pattern intensity sums average to zero")
    values = y.values
    correlation = (values[:, None] * patterns).mean(axis=0)
    reference = (sums[:, None] * patterns).mean(axis=0)
    return correlation - (float(values.mean()) / mean_sum) * reference


def dgi_reconstruct(phi: ScanningBasis, y: MeasurementVector, shape: Optional[tuple[int, int]] = None) -> Image:
    """Differential ghost imaging estimate, min-max normalized to [0, 1]."""
    height, width = _image_shape(phi.n, shape)
    estimate = dgi_estimate(phi, y)
    low, high = float(estimate.min()), float(estimate.max())
    # rounding-level spread counts as constant
    if high - low <= 1e-12 * max(1.0, abs(low), abs(high)):
        return Image.from_vector(np.zeros(phi.n), height, width)
    return Image.from_vector((estimate - low) / (high - low), height, width, clip=True)
