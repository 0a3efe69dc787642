"""two-stage Gauss-Legendre implicit runge-kutta step (order 4) with forward sensitivities.

stages K_i = f(x + dt sum_j a_ij K_j, u) are solved by simplified newton with the analytic
jacobian of f, refreshed only when the iteration stops contracting. sensitivities follow from
differentiating the converged stage equations
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike
from scipy.linalg import LinAlgError, lu_factor, lu_solve

from .dynamics import force_input_matrix, vector_field, vector_field_jacobians
from .exceptions import IntegratorError, ModelValidityError
from .models import NU, NX_NONLINEAR, Mat, ModelParams, Vec
from .utils import as_vector

logger = logging.getLogger(__name__)

NEWTON_TOLERANCE = 1e-10
NEWTON_MAX_ITERATIONS = 20
# simplified newton keeps its matrix while the residual shrinks at least this fast
NEWTON_CONTRACTION = 0.25

_SQRT3_6 = math.sqrt(3.0) / 6.0
BUTCHER_A = np.array([[0.25, 0.25 - _SQRT3_6], [0.25 + _SQRT3_6, 0.25]])
BUTCHER_B = np.array([0.5, 0.5])
N_STAGES = 2

# scipy lu_factor output
NewtonFactor = tuple[Mat, np.ndarray]


@dataclass(frozen=True, eq=False)
class StageGuess:
    """converged stages of a step and the newton factorization at them.

    seeds the next step over a nearby interval, e.g. the same shooting interval one control tick later
    """

    stages: Mat
    factor: NewtonFactor


@dataclass(frozen=True, eq=False)
class StepResult:
    x_next: Vec
    # d x_next / d (x, u, F_ext)
    dx: Mat
    du: Mat
    df: Mat
    newton_iterations: int
    warm: StageGuess


def _stage_states(x: Vec, k: Mat, dt: float) -> Mat:
    return x + dt * (BUTCHER_A @ k)


def _newton_matrix(jacobians: list[Mat], dt: float) -> Mat:
    # I - dt [J_i a_ij]_{ij}
    n = NX_NONLINEAR
    m = np.eye(N_STAGES * n)
    for i in range(N_STAGES):
        for j in range(N_STAGES):
            m[i * n : (i + 1) * n, j * n : (j + 1) * n] -= dt * BUTCHER_A[i, j] * jacobians[i]
    return m


def _factor(jacobians: list[Mat], dt: float, iteration: int) -> NewtonFactor:
    try:
        return lu_factor(_newton_matrix(jacobians, dt), check_finite=True)
    except (LinAlgError, ValueError) as e:
        raise IntegratorError(f"newton matrix singular or non-finite at iteration {iteration}: {e}")


def integrate_step(
    x: ArrayLike,
    u: ArrayLike,
    f_ext: ArrayLike,
    dt: float,
    params: ModelParams,
    psi_rate: float = 0.0,
    tolerance: float = NEWTON_TOLERANCE,
    max_iterations: int = NEWTON_MAX_ITERATIONS,
    warm: StageGuess | None = None,
) -> StepResult:
    """one implicit step. `warm` seeds the stages and the simplified-newton matrix;
    the returned sensitivities always come from a fresh factorization at the converged stages
    """
    if not dt > 0:
        raise ModelValidityError(f"integration step must be positive, got {dt}")
    x0 = as_vector(x, NX_NONLINEAR, "x")
    u0 = as_vector(u, NU, "u")
    force = as_vector(f_ext, 3, "f_ext")
    n = NX_NONLINEAR

    factor: NewtonFactor | None = None
    if warm is not None and warm.stages.shape == (N_STAGES, n) and np.all(np.isfinite(warm.stages)):
        k = warm.stages.copy()
        factor = warm.factor
    else:
        # explicit-euler-like initial guess: both stages start at f(x)
        f0 = vector_field(x0, u0, psi_rate, force, params)
        k = np.vstack([f0, f0])

    iterations = 0
    converged = False
    previous = math.inf
    for iterations in range(1, max_iterations + 1):
        stages = _stage_states(x0, k, dt)
        residual = k - np.vstack([vector_field(s, u0, psi_rate, force, params) for s in stages])
        norm = float(np.abs(residual).max())
        if not math.isfinite(norm):
            break
        if norm <= tolerance:
            converged = True
            break
        if factor is None or norm > NEWTON_CONTRACTION * previous:
            factor = _factor([vector_field_jacobians(s, u0, params)[0] for s in stages], dt, iterations)
        previous = norm
        k = k - lu_solve(factor, residual.reshape(-1)).reshape(N_STAGES, n)

    if not converged:
        raise IntegratorError(f"implicit stages did not converge in {max_iterations} newton iterations (dt={dt})")

    x_next = x0 + dt * (BUTCHER_B @ k)

    stages = _stage_states(x0, k, dt)
    pairs = [vector_field_jacobians(s, u0, params) for s in stages]
    jx = [pair[0] for pair in pairs]
    factor = _factor(jx, dt, iterations)
    b_d = force_input_matrix(params)
    # M dK/dp = [df/dx|_i dX_i/dp + df/dp|_i] with dX_i/dx = I + ...
    dk_dx = lu_solve(factor, np.vstack(jx)).reshape(N_STAGES, n, n)
    dk_du = lu_solve(factor, np.vstack([pair[1] for pair in pairs])).reshape(N_STAGES, n, NU)
    dk_df = lu_solve(factor, np.vstack([b_d] * N_STAGES)).reshape(N_STAGES, n, 3)

    dx = np.eye(n) + dt * np.tensordot(BUTCHER_B, dk_dx, axes=1)
    du = dt * np.tensordot(BUTCHER_B, dk_du, axes=1)
    df = dt * np.tensordot(BUTCHER_B, dk_df, axes=1)
    return StepResult(
        x_next=x_next,
        dx=dx,
        du=du,
        df=df,
        newton_iterations=iterations,
        warm=StageGuess(stages=k, factor=factor),
    )
