"""dense box-constrained convex QP: min 1/2 z'Hz + g'z + c  s.t.  lb <= z <= ub.

primal active-set with single-constraint exchanges. a working-set change refactors the
free block of H from scratch, which is fine at the sizes the controllers produce (<= 60)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .exceptions import QpSolveError
from .models import Mat, Vec

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-8
DEFAULT_MAX_ITERATIONS = 200

# working-set markers
FREE = 0
AT_LOWER = -1
AT_UPPER = 1


@dataclass(frozen=True, eq=False)
class BoxQp:
    h: Mat
    g: Vec
    lb: Vec
    ub: Vec
    # constant offset, kept so objective() reproduces the full quadratic cost
    c: float = 0.0

    def __post_init__(self) -> None:
        h = np.asarray(self.h, dtype=np.float64)
        g = np.asarray(self.g, dtype=np.float64).reshape(-1)
        lb = np.asarray(self.lb, dtype=np.float64).reshape(-1)
        ub = np.asarray(self.ub, dtype=np.float64).reshape(-1)
        n = g.size
        if h.shape != (n, n) or lb.size != n or ub.size != n:
            raise QpSolveError(f"inconsistent qp dimensions: H {h.shape}, g {n}, lb {lb.size}, ub {ub.size}")
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(g))):
            raise QpSolveError("qp data contains non-finite entries")
        if np.any(lb > ub):
            raise QpSolveError(f"crossed bounds at indices {np.flatnonzero(lb > ub).tolist()}")
        scale = max(1.0, float(np.abs(h).max(initial=0.0)))
        if not np.allclose(h, h.T, rtol=0.0, atol=1e-10 * scale):
            raise QpSolveError("hessian is not symmetric")
        h = 0.5 * (h + h.T)
        if n and float(np.linalg.eigvalsh(h).min()) <= 0.0:
            raise QpSolveError("hessian is not positive definite")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)

    @property
    def n(self) -> int:
        return int(self.g.size)

    def objective(self, z: ArrayLike) -> float:
        z = np.asarray(z, dtype=np.float64)
        return float(0.5 * z @ self.h @ z + self.g @ z + self.c)

    def gradient(self, z: Vec) -> Vec:
        return self.h @ z + self.g

    def scaled(self, factor: float) -> BoxQp:
        """same minimizer, objective multiplied by `factor`"""
        return BoxQp(h=self.h * factor, g=self.g * factor, lb=self.lb, ub=self.ub, c=self.c * factor)

    def kkt_residual(self, z: Vec) -> float:
        grad = self.gradient(z)
        at_lb = z <= self.lb
        at_ub = z >= self.ub
        # at a bound only the wrongly-signed part of the gradient counts as violation
        res = np.abs(grad)
        res = np.where(at_lb, np.maximum(0.0, -grad), res)
        res = np.where(at_ub, np.maximum(0.0, grad), res)
        res = np.where(at_lb & at_ub, 0.0, res)
        return float(res.max(initial=0.0))


@dataclass(frozen=True, eq=False)
class QpSolution:
    z: Vec
    iterations: int
    kkt_residual: float
    objective: float
    # objective after every primal move, non-increasing
    history: tuple[float, ...] = field(default=())


class BoxQpSolver:
    """holds the working set between calls; one solve at a time per instance"""

    def __init__(self, tolerance: float = DEFAULT_TOLERANCE, max_iterations: int = DEFAULT_MAX_ITERATIONS) -> None:
        self.tolerance = tolerance
        self.max_iterations = max_iterations
        self.last_iterations = 0

    def solve(self, qp: BoxQp, warm_start: ArrayLike | None = None) -> QpSolution:
        n = qp.n
        if warm_start is None:
            z = np.clip(np.zeros(n), qp.lb, qp.ub)
        else:
            z = np.asarray(warm_start, dtype=np.float64).reshape(-1)
            if z.size != n:
                raise QpSolveError(f"warm start has {z.size} entries, expected {n}")
            z = np.clip(z, qp.lb, qp.ub)

        working = np.full(n, FREE, dtype=np.int8)
        working[z <= qp.lb] = AT_LOWER
        working[z >= qp.ub] = AT_UPPER
        # a degenerate box pins the variable for good
        pinned = qp.lb == qp.ub
        history = [qp.objective(z)]

        for iteration in range(1, self.max_iterations + 1):
            grad = qp.gradient(z)
            free = working == FREE
            if not np.any(free) or float(np.abs(grad[free]).max()) <= self.tolerance:
                # stationary on the current face, check multiplier signs of the fixed set
                mult = np.where(working == AT_LOWER, grad, np.where(working == AT_UPPER, -grad, 0.0))
                mult[pinned] = 0.0
                worst = int(np.argmin(mult))
                if mult[worst] >= -self.tolerance:
                    self.last_iterations = iteration
                    return QpSolution(
                        z=z,
                        iterations=iteration,
                        kkt_residual=qp.kkt_residual(z),
                        objective=qp.objective(z),
                        history=tuple(history),
                    )
                # argmin returns the lowest index on ties
                working[worst] = FREE
                continue

            idx = np.flatnonzero(free)
            try:
                factor = cho_factor(qp.h[np.ix_(idx, idx)], lower=True, check_finite=False)
            except LinAlgError as e:
                raise QpSolveError(f"free block factorization failed: {e}", best_iterate=z, iterations=iteration)
            step = -cho_solve(factor, grad[idx], check_finite=False)

            alpha = 1.0
            blocking = -1
            blocking_side = FREE
            for pos, i in enumerate(idx):
                s = step[pos]
                if s < 0.0:
                    ratio = (qp.lb[i] - z[i]) / s
                    side = AT_LOWER
                elif s > 0.0:
                    ratio = (qp.ub[i] - z[i]) / s
                    side = AT_UPPER
                else:
                    continue
                # strict comparison keeps the lowest index on ties
                if ratio < alpha:
                    alpha = max(ratio, 0.0)
                    blocking = int(i)
                    blocking_side = side

            z = z.copy()
            z[idx] += alpha * step
            if blocking >= 0:
                working[blocking] = blocking_side
                z[blocking] = qp.lb[blocking] if blocking_side == AT_LOWER else qp.ub[blocking]
            np.clip(z, qp.lb, qp.ub, out=z)
            history.append(qp.objective(z))

        self.last_iterations = self.max_iterations
        logger.warning(f"box qp hit the iteration cap ({self.max_iterations}), kkt residual {qp.kkt_residual(z):.3e}")
        raise QpSolveError(
            f"box qp did not converge in {self.max_iterations} iterations",
            best_iterate=z,
            iterations=self.max_iterations,
        )


def solve_box_qp(
    qp: BoxQp,
    warm_start: ArrayLike | None = None,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
) -> QpSolution:
    return BoxQpSolver(tolerance=tolerance, max_iterations=max_iterations).solve(qp, warm_start)
