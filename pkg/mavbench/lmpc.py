"""linear MPC on the hover model: condensed box QP, disturbance-aware targets, command post-processing"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass
from typing import TypedDict

import numpy as np
from numpy.typing import ArrayLike
from scipy.linalg import LinAlgError, block_diag, solve_discrete_are

from .dynamics import (
    LinearModel,
    compensate_thrust,
    discretize_zoh,
    heading_free_state,
    linearize_hover,
    rotate_cmd_to_body,
)
from .event_logger import EventLogger, event_logger
from .exceptions import ModelValidityError, QpSolveError, RiccatiError
from .models import (
    NU,
    AttitudeThrustCommand,
    Mat,
    MavState,
    ModelParams,
    OcpConfig,
    Vec,
)
from .qp import BoxQp, BoxQpSolver
from .utils import as_vector, symmetrize

logger = logging.getLogger(__name__)

RICCATI_TOLERANCE = 1e-9
RICCATI_MAX_ITERATIONS = 100_000


@dataclass(frozen=True, eq=False)
class ReferenceWindow:
    """per-node references on the prediction grid.

    x_ref/u_ref follow the hover-model layout (heading-free angles, thrust as deviation
    from hover). the raw samples are kept for controllers that build their own targets
    """

    x_ref: Mat
    u_ref: Mat
    position: Mat | None = None
    velocity: Mat | None = None
    acceleration: Mat | None = None
    yaw: Vec | None = None
    yaw_rate: Vec | None = None

    def __post_init__(self) -> None:
        x_ref = np.atleast_2d(np.asarray(self.x_ref, dtype=np.float64))
        u_ref = np.atleast_2d(np.asarray(self.u_ref, dtype=np.float64))
        if x_ref.shape[0] != u_ref.shape[0] + 1:
            raise ModelValidityError(f"window needs N+1 states and N inputs, got {x_ref.shape[0]} and {u_ref.shape[0]}")
        if not (np.all(np.isfinite(x_ref)) and np.all(np.isfinite(u_ref))):
            raise ModelValidityError("reference window contains non-finite entries")
        object.__setattr__(self, "x_ref", x_ref)
        object.__setattr__(self, "u_ref", u_ref)

    @property
    def horizon(self) -> int:
        return int(self.u_ref.shape[0])

    def shifted_by(self, dx: Vec, du: Vec) -> ReferenceWindow:
        return dataclasses.replace(self, x_ref=self.x_ref + dx, u_ref=self.u_ref + du)

    def heading_free(self, psi: float) -> ReferenceWindow:
        """attitude rows and attitude inputs rotated from the body frame at heading psi into the heading-free frame"""
        if psi == 0.0:
            return self
        cp, sp = math.cos(psi), math.sin(psi)
        x_ref, u_ref = self.x_ref.copy(), self.u_ref.copy()
        for rows, (i, j) in ((x_ref, (6, 7)), (u_ref, (0, 1))):
            phi, theta = rows[:, i].copy(), rows[:, j].copy()
            rows[:, i] = cp * phi - sp * theta
            rows[:, j] = sp * phi + cp * theta
        return dataclasses.replace(self, x_ref=x_ref, u_ref=u_ref)


class LmpcDiagnostics(TypedDict):
    solve_time: float
    iterations: int
    objective: float
    fault: bool
    predicted: Mat


def _dare_residual(p: Mat, a: Mat, b: Mat, q: Mat, r: Mat) -> Mat:
    btp = b.T @ p
    return q + a.T @ p @ a - (a.T @ p @ b) @ np.linalg.solve(r + btp @ b, btp @ a) - p


def riccati_terminal(
    a: Mat,
    b: Mat,
    q: Mat,
    r: Mat,
    tolerance: float = RICCATI_TOLERANCE,
    max_iterations: int = RICCATI_MAX_ITERATIONS,
) -> Mat:
    """infinite-horizon cost-to-go of the unconstrained problem, used as terminal weight"""
    a, b, q, r = (np.atleast_2d(np.asarray(m, dtype=np.float64)) for m in (a, b, q, r))
    p: Mat | None = None
    try:
        p = symmetrize(solve_discrete_are(a, b, q, r))
    except (LinAlgError, ValueError) as e:
        logger.debug(f"direct riccati solve failed ({e}), falling back to fixed-point iteration")

    def _converged(candidate: Mat) -> bool:
        scale = max(1.0, float(np.abs(candidate).max()))
        return float(np.abs(_dare_residual(candidate, a, b, q, r)).max()) <= tolerance * scale

    if p is not None and np.all(np.isfinite(p)) and _converged(p):
        return p

    # value iteration, started from the direct solution when it was merely inaccurate
    p = q.copy() if p is None or not np.all(np.isfinite(p)) else p
    for _ in range(max_iterations):
        btp = b.T @ p
        p = symmetrize(q + a.T @ p @ a - (a.T @ p @ b) @ np.linalg.solve(r + btp @ b, btp @ a))
        if not np.all(np.isfinite(p)):
            break
        if _converged(p):
            return p
    raise RiccatiError(f"riccati iteration did not converge in {max_iterations} iterations")


def resolve_terminal(model: LinearModel, cfg: OcpConfig) -> OcpConfig:
    if cfg.p_terminal is not None:
        return cfg
    p = riccati_terminal(model.a, model.b, cfg.q_x, cfg.r_u)
    return dataclasses.replace(cfg, p_terminal=p)


class CondensedOcp:
    """state-eliminated OCP matrices for a fixed model, horizon and weights.

    everything that does not depend on x0, F_ext or the references is built once here
    """

    def __init__(self, model: LinearModel, cfg: OcpConfig) -> None:
        nx, nu, n = model.nx, model.nu, cfg.horizon
        if cfg.q_x.shape != (nx, nx) or cfg.r_u.shape != (nu, nu):
            raise ModelValidityError(
                f"weight dimensions {cfg.q_x.shape}/{cfg.r_u.shape} do not match model ({nx} states, {nu} inputs)"
            )
        terminal = cfg.p_terminal if cfg.p_terminal is not None else riccati_terminal(model.a, model.b, cfg.q_x, cfg.r_u)
        if terminal.shape != (nx, nx):
            raise ModelValidityError(f"terminal weight shape {terminal.shape} does not match {nx} states")
        self.model = model
        self.horizon = n
        self.q = cfg.q_x
        self.r = cfg.r_u
        self.p = terminal

        a_pow = [np.eye(nx)]
        for _ in range(n):
            a_pow.append(model.a @ a_pow[-1])
        # row block k predicts x_{k+1}
        su = np.zeros((n * nx, n * nu))
        for k in range(n):
            for j in range(k + 1):
                su[k * nx : (k + 1) * nx, j * nu : (j + 1) * nu] = a_pow[k - j] @ model.b
        self.su = su
        self.w = block_diag(*([cfg.q_x] * (n - 1) + [terminal]))
        self.r_bar = block_diag(*([cfg.r_u] * n))
        self.su_t_w = su.T @ self.w
        self.h = 2.0 * (self.su_t_w @ su + self.r_bar)

    def free_response(self, x0: Vec, f_ext: Vec) -> Mat:
        """x_1..x_N with zero input, disturbance held constant"""
        disturbance = self.model.b_d @ f_ext
        out = np.empty((self.horizon, self.model.nx))
        x = x0
        for k in range(self.horizon):
            x = self.model.a @ x + disturbance
            out[k] = x
        return out

    def qp(self, x0: Vec, f_ext: Vec, ref: ReferenceWindow, lower: Vec, upper: Vec) -> BoxQp:
        nx, nu, n = self.model.nx, self.model.nu, self.horizon
        if ref.x_ref.shape != (n + 1, nx) or ref.u_ref.shape != (n, nu):
            raise ModelValidityError(
                f"reference window {ref.x_ref.shape}/{ref.u_ref.shape} does not match horizon {n} with {nx} states"
            )
        x0 = as_vector(x0, nx, "x0")
        err = (self.free_response(x0, f_ext) - ref.x_ref[1:]).reshape(-1)
        u_ref = ref.u_ref.reshape(-1)
        e0 = x0 - ref.x_ref[0]
        g = 2.0 * (self.su_t_w @ err - self.r_bar @ u_ref)
        c = float(e0 @ self.q @ e0 + err @ self.w @ err + u_ref @ self.r_bar @ u_ref)
        return BoxQp(h=self.h, g=g, lb=np.tile(lower, n), ub=np.tile(upper, n), c=c)

    def predict(self, x0: Vec, f_ext: Vec, z: Vec) -> Mat:
        states = self.free_response(x0, f_ext).reshape(-1) + self.su @ z
        return np.vstack([x0, states.reshape(self.horizon, self.model.nx)])


def build_condensed_qp(
    model: LinearModel,
    cfg: OcpConfig,
    x0: ArrayLike,
    f_ext: ArrayLike,
    ref: ReferenceWindow,
    lower: ArrayLike,
    upper: ArrayLike,
) -> BoxQp:
    force = as_vector(f_ext, model.b_d.shape[1], "f_ext")
    lo = as_vector(lower, model.nu, "lower")
    hi = as_vector(upper, model.nu, "upper")
    return CondensedOcp(model, cfg).qp(np.asarray(x0, dtype=np.float64), force, ref, lo, hi)


def steady_state_offset(model: LinearModel, f_ext: ArrayLike, n_pos: int = 3) -> tuple[Vec, Vec]:
    """(dx, du) holding the position still against a constant force: (A - I)dx + B du = -B_d F, dp = 0"""
    nx, nu = model.nx, model.nu
    if nx + n_pos != nx + nu:
        raise ModelValidityError(f"steady-state system needs as many inputs as pinned positions ({nu} vs {n_pos})")
    force = as_vector(f_ext, model.b_d.shape[1], "f_ext")
    lhs = np.zeros((nx + n_pos, nx + nu))
    lhs[:nx, :nx] = model.a - np.eye(nx)
    lhs[:nx, nx:] = model.b
    lhs[nx:, :n_pos] = np.eye(n_pos)
    rhs = np.concatenate([-model.b_d @ force, np.zeros(n_pos)])
    try:
        sol = np.linalg.solve(lhs, rhs)
    except LinAlgError as e:
        raise ModelValidityError(f"steady-state target system is singular: {e}")
    return sol[:nx], sol[nx:]


def build_feedforward(ref_acc_body: ArrayLike, g: float) -> Mat:
    """reference inputs from body-frame accelerations: (-a_y/g, a_x/g, a_z) per node"""
    acc = np.atleast_2d(np.asarray(ref_acc_body, dtype=np.float64))
    if acc.shape[1] != 3 or not np.all(np.isfinite(acc)):
        raise ModelValidityError(f"feed-forward needs finite (N, 3) accelerations, got shape {acc.shape}")
    return np.column_stack([-acc[:, 1] / g, acc[:, 0] / g, acc[:, 2]])


class LinearMpc:
    def __init__(
        self,
        params: ModelParams,
        cfg: OcpConfig,
        control_dt: float = 0.01,
        events: EventLogger | None = None,
    ) -> None:
        self.params = params
        self.model = discretize_zoh(linearize_hover(params), cfg.dt_pred)
        self.cfg = resolve_terminal(self.model, cfg)
        self.ocp = CondensedOcp(self.model, self.cfg)
        self.events = events if events is not None else event_logger
        self.solver = BoxQpSolver()

        # the thrust input is a deviation from hover, so its bound moves by -g
        lower = params.limits.lower()
        upper = params.limits.upper()
        lower[2] -= params.g
        upper[2] -= params.g
        self.lower = lower
        self.upper = upper

        self._ticks_per_node = max(1, round(cfg.dt_pred / control_dt))
        self._tick = 0
        self._previous: Mat | None = None
        self._last_command = AttitudeThrustCommand.hover(params)
        logger.info(
            f"lmpc ready: horizon {cfg.horizon} x {cfg.dt_pred}s, {self._ticks_per_node} control ticks per node"
        )

    def reset(self) -> None:
        self._tick = 0
        self._previous = None
        self._last_command = AttitudeThrustCommand.hover(self.params)

    def _warm_start(self) -> Vec | None:
        if self._previous is None:
            return None
        self._tick += 1
        if self._tick < self._ticks_per_node:
            return self._previous.reshape(-1)
        # crossed a prediction node: drop the consumed input, repeat the last one
        self._tick = 0
        return np.vstack([self._previous[1:], self._previous[-1:]]).reshape(-1)

    def target_window(self, ref: ReferenceWindow, f_ext: Vec, psi: float = 0.0) -> ReferenceWindow:
        # window feed-forward is body-frame at psi, the QP works heading-free
        dx, du = steady_state_offset(self.model, f_ext)
        return ref.heading_free(psi).shifted_by(dx, du)

    def step(
        self, x: MavState, f_ext_est: ArrayLike, ref: ReferenceWindow
    ) -> tuple[AttitudeThrustCommand, LmpcDiagnostics]:
        start = time.perf_counter()
        force = as_vector(f_ext_est, 3, "f_ext_est")
        x0 = heading_free_state(x)
        qp = self.ocp.qp(x0, force, self.target_window(ref, force, x.psi), self.lower, self.upper)
        # unit-scale the problem so the absolute KKT tolerance means the same at any weight scale
        scale = 1.0 / max(1.0, float(np.diag(qp.h).max()))
        try:
            sol = self.solver.solve(qp.scaled(scale), warm_start=self._warm_start())
        except QpSolveError as e:
            elapsed = time.perf_counter() - start
            self.events.log_event(
                "qp_fault",
                f"lmpc qp failed, holding previous command: {e}",
                level="warning",
                metadata={"controller": "lmpc", "iterations": e.iterations},
            )
            return self._last_command, {
                "solve_time": elapsed,
                "iterations": e.iterations,
                "objective": math.nan,
                "fault": True,
                "predicted": np.tile(x0, (self.cfg.horizon + 1, 1)),
            }

        inputs = sol.z.reshape(self.cfg.horizon, NU)
        self._previous = inputs
        phi_i, theta_i, t_cmd = inputs[0]
        limits = self.params.limits
        phi, theta = rotate_cmd_to_body(phi_i, theta_i, x.psi)
        phi = min(max(phi, limits.phi_min), limits.phi_max)
        theta = min(max(theta, limits.theta_min), limits.theta_max)
        thrust = compensate_thrust(t_cmd, x.phi, x.theta, self.params)

        psi_rate = 0.0 if ref.yaw_rate is None else float(ref.yaw_rate[0])
        if self.cfg.psi_rate_max is not None:
            psi_rate = min(max(psi_rate, -self.cfg.psi_rate_max), self.cfg.psi_rate_max)

        command = AttitudeThrustCommand(phi_cmd=phi, theta_cmd=theta, psi_rate_cmd=psi_rate, thrust_cmd=thrust)
        self._last_command = command
        elapsed = time.perf_counter() - start
        logger.debug(f"lmpc step: {sol.iterations} qp iterations, {elapsed * 1e3:.3f} ms")
        return command, {
            "solve_time": elapsed,
            "iterations": sol.iterations,
            "objective": sol.objective / scale,
            "fault": False,
            "predicted": self.ocp.predict(x0, force, sol.z),
        }


__all__ = [
    "CondensedOcp",
    "LinearMpc",
    "LmpcDiagnostics",
    "ReferenceWindow",
    "build_condensed_qp",
    "build_feedforward",
    "resolve_terminal",
    "riccati_terminal",
    "steady_state_offset",
]
