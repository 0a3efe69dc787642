"""nonlinear MPC: multiple shooting over the full model, one gauss-newton RTI step per control tick.

preparation (integrate every shooting interval, condense the linearized problem) is
independent of the measured state. feedback embeds the state and the latest force estimate
into the prepared QP through precomputed sensitivities, solves it, and takes a full step.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import TypedDict

import numpy as np
from numpy.typing import ArrayLike
from scipy.linalg import block_diag

from .dynamics import discretize_zoh, linearize_hover
from .event_logger import EventLogger, event_logger
from .exceptions import IntegratorError, ModelValidityError, QpSolveError
from .integrator import StageGuess, integrate_step
from .lmpc import ReferenceWindow, resolve_terminal
from .models import (
    IDX_PSI,
    NU,
    NX_NONLINEAR,
    AttitudeThrustCommand,
    Mat,
    MavState,
    ModelParams,
    OcpConfig,
    Vec,
)
from .qp import BoxQp, BoxQpSolver
from .utils import as_vector, wrap_angle

logger = logging.getLogger(__name__)

# smallest accepted specific-force magnitude when inverting the thrust direction
_MIN_SPECIFIC_FORCE = 1e-3


@dataclass(frozen=True, eq=False)
class ShootingGrid:
    nodes: Mat
    controls: Mat
    dt_pred: float
    # per interval, seeds the implicit stages of the next preparation
    warm: tuple[StageGuess | None, ...] | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        nodes = np.atleast_2d(np.asarray(self.nodes, dtype=np.float64))
        controls = np.atleast_2d(np.asarray(self.controls, dtype=np.float64))
        if nodes.shape[1] != NX_NONLINEAR or controls.shape[1] != NU or nodes.shape[0] != controls.shape[0] + 1:
            raise ModelValidityError(f"inconsistent shooting grid: nodes {nodes.shape}, controls {controls.shape}")
        if not self.dt_pred > 0:
            raise ModelValidityError(f"dt_pred must be positive, got {self.dt_pred}")
        if not (np.all(np.isfinite(nodes)) and np.all(np.isfinite(controls))):
            raise ModelValidityError("shooting grid contains non-finite entries")
        if self.warm is not None and len(self.warm) != controls.shape[0]:
            raise ModelValidityError(f"{len(self.warm)} stage guesses for {controls.shape[0]} shooting intervals")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "controls", controls)

    @property
    def horizon(self) -> int:
        return int(self.controls.shape[0])

    @classmethod
    def rollout(
        cls,
        x0: ArrayLike,
        controls: ArrayLike,
        dt_pred: float,
        params: ModelParams,
        f_ext: ArrayLike = (0.0, 0.0, 0.0),
        psi_rates: ArrayLike | None = None,
    ) -> ShootingGrid:
        """defect-free grid: nodes obtained by integrating `controls` from x0"""
        controls = np.atleast_2d(np.asarray(controls, dtype=np.float64))
        rates = np.zeros(controls.shape[0]) if psi_rates is None else np.asarray(psi_rates, dtype=np.float64)
        nodes = [as_vector(x0, NX_NONLINEAR, "x0")]
        warm: list[StageGuess | None] = []
        for k, u in enumerate(controls):
            step = integrate_step(nodes[-1], u, f_ext, dt_pred, params, psi_rate=float(rates[k]))
            nodes.append(step.x_next)
            warm.append(step.warm)
        return cls(nodes=np.vstack(nodes), controls=controls, dt_pred=dt_pred, warm=tuple(warm))


@dataclass(frozen=True, eq=False)
class NmpcTargets:
    """tracking targets on the full state, inputs are absolute (phi_cmd, theta_cmd, thrust)"""

    x_ref: Mat
    u_ref: Mat
    psi_rates: Vec


@dataclass(frozen=True, eq=False)
class NmpcProblem:
    params: ModelParams
    q: Mat
    r: Mat
    p: Mat
    lower: Vec
    upper: Vec
    _stacked: dict[int, tuple[Mat, Mat]] = field(default_factory=dict, init=False, repr=False)

    @classmethod
    def from_config(cls, params: ModelParams, cfg: OcpConfig) -> NmpcProblem:
        """9-state weights from the shared config: heading weight appended to Q_x and P"""
        if cfg.p_terminal is None:
            cfg = resolve_terminal(discretize_zoh(linearize_hover(params), cfg.dt_pred), cfg)
        assert cfg.p_terminal is not None
        yaw = np.array([[cfg.q_yaw]])
        return cls(
            params=params,
            q=block_diag(cfg.q_x, yaw),
            r=cfg.r_u,
            p=block_diag(cfg.p_terminal, yaw),
            lower=params.limits.lower(),
            upper=params.limits.upper(),
        )

    def stacked_weights(self, horizon: int) -> tuple[Mat, Mat]:
        """block-diagonal state and input weights over a horizon, built once per horizon"""
        if horizon not in self._stacked:
            w_bar = block_diag(*([self.q] * horizon + [self.p]))
            r_bar = block_diag(*([self.r] * horizon))
            self._stacked[horizon] = (w_bar, r_bar)
        return self._stacked[horizon]


@dataclass(frozen=True, eq=False)
class RtiWorkspace:
    grid: ShootingGrid
    targets: NmpcTargets
    problem: NmpcProblem
    f_ext: Vec
    # stacked over nodes 0..N: ds = phi_x ds0 + psi_f dF + gamma dq + drift
    phi_x: Mat
    psi_f: Mat
    gamma: Mat
    drift: Vec
    tracking_error: Vec
    control_error: Vec
    w_bar: Mat
    r_bar: Mat
    h: Mat
    gamma_t_w: Mat
    defect_norm: float
    prepare_time: float
    # converged stages per interval, carried into the next grid
    warm: tuple[StageGuess | None, ...] = ()


class NmpcDiagnostics(TypedDict):
    solve_time: float
    prepare_time: float
    iterations: int
    objective: float
    kkt_residual: float
    step_norm: float
    defect_norm: float
    fault: bool
    predicted: Mat


def state_error(nodes: Mat, x_ref: Mat) -> Mat:
    err = nodes - x_ref
    err[:, IDX_PSI] = (err[:, IDX_PSI] + math.pi) % (2.0 * math.pi) - math.pi
    return err


def build_targets(
    ref: ReferenceWindow,
    params: ModelParams,
    f_ext: ArrayLike,
    psi_rate_max: float | None = math.pi,
) -> NmpcTargets:
    """invert the thrust map along the reference: attitude and thrust that realize a_ref under F_ext.

    specific force a_ref + g e_z - F/m, corrected once for rotor drag at the reference velocity
    """
    force = as_vector(f_ext, 3, "f_ext")
    n_nodes = ref.x_ref.shape[0]
    position = ref.position if ref.position is not None else ref.x_ref[:, 0:3]
    velocity = ref.velocity if ref.velocity is not None else ref.x_ref[:, 3:6]
    acceleration = ref.acceleration if ref.acceleration is not None else np.zeros((n_nodes, 3))
    yaw = ref.yaw if ref.yaw is not None else np.zeros(n_nodes)
    yaw_rate = ref.yaw_rate if ref.yaw_rate is not None else np.zeros(n_nodes)

    a_des = acceleration + np.array([0.0, 0.0, params.g]) - force / params.mass
    thrust = np.linalg.norm(a_des, axis=1)
    r3 = a_des / np.maximum(thrust, _MIN_SPECIFIC_FORCE)[:, None]
    along = np.sum(r3 * velocity, axis=1)
    a_des = a_des + params.k_drag * thrust[:, None] * (velocity - r3 * along[:, None])
    thrust = np.maximum(np.linalg.norm(a_des, axis=1), _MIN_SPECIFIC_FORCE)
    unit = a_des / thrust[:, None]
    # heading-only rotation into the body frame
    cy, sy = np.cos(yaw), np.sin(yaw)
    bx = cy * unit[:, 0] + sy * unit[:, 1]
    by = -sy * unit[:, 0] + cy * unit[:, 1]
    phi = np.arcsin(np.clip(-by, -1.0, 1.0))
    theta = np.arctan2(bx, unit[:, 2])

    x_ref = np.column_stack([position, velocity, phi, theta, yaw])
    u_ref = np.column_stack([phi / params.k_phi, theta / params.k_theta, thrust])

    rates = np.asarray(yaw_rate[:-1], dtype=np.float64)
    if psi_rate_max is not None:
        rates = np.clip(rates, -psi_rate_max, psi_rate_max)
    return NmpcTargets(x_ref=x_ref, u_ref=u_ref[:-1], psi_rates=rates)


def rti_prepare(grid: ShootingGrid, targets: NmpcTargets, problem: NmpcProblem, f_ext: ArrayLike) -> RtiWorkspace:
    start = time.perf_counter()
    force = as_vector(f_ext, 3, "f_ext")
    n, nx, nu = grid.horizon, NX_NONLINEAR, NU
    if targets.x_ref.shape != (n + 1, nx) or targets.u_ref.shape != (n, nu):
        raise ModelValidityError(f"targets {targets.x_ref.shape}/{targets.u_ref.shape} do not match horizon {n}")

    phi_x = np.zeros(((n + 1) * nx, nx))
    psi_f = np.zeros(((n + 1) * nx, 3))
    gamma = np.zeros(((n + 1) * nx, n * nu))
    drift = np.zeros((n + 1) * nx)
    phi_x[:nx] = np.eye(nx)
    defect_norm = 0.0
    seeds = grid.warm if grid.warm is not None else (None,) * n
    warm: list[StageGuess | None] = []

    for k in range(n):
        step = integrate_step(
            grid.nodes[k],
            grid.controls[k],
            force,
            grid.dt_pred,
            problem.params,
            psi_rate=float(targets.psi_rates[k]),
            warm=seeds[k],
        )
        warm.append(step.warm)
        defect = step.x_next - grid.nodes[k + 1]
        defect_norm = max(defect_norm, float(np.abs(defect).max()))
        cur = slice(k * nx, (k + 1) * nx)
        nxt = slice((k + 1) * nx, (k + 2) * nx)
        phi_x[nxt] = step.dx @ phi_x[cur]
        psi_f[nxt] = step.dx @ psi_f[cur] + step.df
        gamma[nxt] = step.dx @ gamma[cur]
        gamma[nxt, k * nu : (k + 1) * nu] += step.du
        drift[nxt] = step.dx @ drift[cur] + defect

    w_bar, r_bar = problem.stacked_weights(n)
    gamma_t_w = gamma.T @ w_bar
    h = 2.0 * (gamma_t_w @ gamma + r_bar)
    return RtiWorkspace(
        grid=grid,
        targets=targets,
        problem=problem,
        f_ext=force,
        phi_x=phi_x,
        psi_f=psi_f,
        gamma=gamma,
        drift=drift,
        tracking_error=state_error(grid.nodes, targets.x_ref).reshape(-1),
        control_error=(grid.controls - targets.u_ref).reshape(-1),
        w_bar=w_bar,
        r_bar=r_bar,
        h=h,
        gamma_t_w=gamma_t_w,
        defect_norm=defect_norm,
        prepare_time=time.perf_counter() - start,
        warm=tuple(warm),
    )


def feedback_qp(ws: RtiWorkspace, ds0: Vec, df: Vec) -> tuple[BoxQp, Vec]:
    """QP in the control increments, plus the state offset that does not depend on them"""
    offset = ws.phi_x @ ds0 + ws.psi_f @ df + ws.drift
    residual = ws.tracking_error + offset
    g = 2.0 * (ws.gamma_t_w @ residual + ws.r_bar @ ws.control_error)
    c = float(residual @ ws.w_bar @ residual + ws.control_error @ ws.r_bar @ ws.control_error)
    q = ws.grid.controls.reshape(-1)
    lb = np.tile(ws.problem.lower, ws.grid.horizon) - q
    ub = np.tile(ws.problem.upper, ws.grid.horizon) - q
    # controls are kept inside the box, so 0 is always feasible up to roundoff
    return BoxQp(h=ws.h, g=g, lb=np.minimum(lb, 0.0), ub=np.maximum(ub, 0.0), c=c), offset


def shift_grid(grid: ShootingGrid, params: ModelParams, f_ext: Vec, psi_rate: float = 0.0) -> ShootingGrid:
    """drop the first interval, extend the tail by integrating the last control once"""
    last = grid.warm[-1] if grid.warm is not None else None
    try:
        step = integrate_step(
            grid.nodes[-1], grid.controls[-1], f_ext, grid.dt_pred, params, psi_rate=psi_rate, warm=last
        )
        tail, tail_warm = step.x_next, step.warm
    except IntegratorError:
        tail, tail_warm = grid.nodes[-1], None
    return ShootingGrid(
        nodes=np.vstack([grid.nodes[1:], tail]),
        controls=np.vstack([grid.controls[1:], grid.controls[-1:]]),
        dt_pred=grid.dt_pred,
        warm=(*grid.warm[1:], tail_warm) if grid.warm is not None else None,
    )


def rti_feedback(
    ws: RtiWorkspace,
    x_now: MavState,
    f_ext_est: ArrayLike,
    shift: bool = True,
    solver: BoxQpSolver | None = None,
) -> tuple[AttitudeThrustCommand, ShootingGrid, NmpcDiagnostics]:
    """raises QpSolveError, the controller turns it into a held command"""
    start = time.perf_counter()
    force = as_vector(f_ext_est, 3, "f_ext_est")
    grid = ws.grid
    ds0 = x_now.to_vector() - grid.nodes[0]
    ds0[IDX_PSI] = wrap_angle(ds0[IDX_PSI])
    qp, offset = feedback_qp(ws, ds0, force - ws.f_ext)

    scale = 1.0 / max(1.0, float(np.diag(qp.h).max()))
    scaled = qp.scaled(scale)
    kkt = scaled.kkt_residual(np.zeros(qp.n))
    sol = (solver or BoxQpSolver()).solve(scaled)

    dq = sol.z
    ds = offset + ws.gamma @ dq
    nodes = grid.nodes + ds.reshape(grid.horizon + 1, NX_NONLINEAR)
    nodes[0] = x_now.to_vector()
    controls = np.clip(grid.controls + dq.reshape(grid.horizon, NU), ws.problem.lower, ws.problem.upper)
    warm = ws.warm if len(ws.warm) == grid.horizon else None
    updated = ShootingGrid(nodes=nodes, controls=controls, dt_pred=grid.dt_pred, warm=warm)

    u0 = controls[0]
    command = AttitudeThrustCommand.from_input(u0, psi_rate_cmd=float(ws.targets.psi_rates[0]))
    next_grid = shift_grid(updated, ws.problem.params, force, float(ws.targets.psi_rates[-1])) if shift else updated
    diagnostics: NmpcDiagnostics = {
        "solve_time": time.perf_counter() - start + ws.prepare_time,
        "prepare_time": ws.prepare_time,
        "iterations": sol.iterations,
        "objective": sol.objective / scale,
        "kkt_residual": kkt,
        "step_norm": float(max(np.abs(dq).max(initial=0.0), np.abs(ds).max(initial=0.0))),
        "defect_norm": ws.defect_norm,
        "fault": False,
        "predicted": nodes,
    }
    return command, next_grid, diagnostics


def trajectory_cost(nodes: Mat, controls: Mat, targets: NmpcTargets, problem: NmpcProblem) -> float:
    """discrete least-squares tracking cost of a candidate trajectory"""
    err = state_error(np.asarray(nodes, dtype=np.float64), targets.x_ref)
    du = np.asarray(controls, dtype=np.float64) - targets.u_ref
    stage = sum(float(e @ problem.q @ e) for e in err[:-1]) + sum(float(d @ problem.r @ d) for d in du)
    return stage + float(err[-1] @ problem.p @ err[-1])


class NonlinearMpc:
    def __init__(
        self,
        params: ModelParams,
        cfg: OcpConfig,
        control_dt: float = 0.01,
        events: EventLogger | None = None,
    ) -> None:
        self.params = params
        self.cfg = resolve_terminal(discretize_zoh(linearize_hover(params), cfg.dt_pred), cfg)
        self.problem = NmpcProblem.from_config(params, self.cfg)
        self.psi_rate_max = cfg.psi_rate_max if cfg.psi_rate_max is not None else math.pi
        self.events = events if events is not None else event_logger
        self.solver = BoxQpSolver()
        self.grid: ShootingGrid | None = None
        self._ticks_per_node = max(1, round(cfg.dt_pred / control_dt))
        self._tick = 0
        self._last_command = AttitudeThrustCommand.hover(params)
        logger.info(
            f"nmpc ready: horizon {cfg.horizon} x {cfg.dt_pred}s, {self._ticks_per_node} control ticks per node"
        )

    def reset(self) -> None:
        self.grid = None
        self._tick = 0
        self._last_command = AttitudeThrustCommand.hover(self.params)

    def _initial_grid(self, x: MavState, targets: NmpcTargets, f_ext: Vec) -> ShootingGrid:
        controls = np.clip(targets.u_ref, self.problem.lower, self.problem.upper)
        return ShootingGrid.rollout(x.to_vector(), controls, self.cfg.dt_pred, self.params, f_ext, targets.psi_rates)

    def _fault(self, event_type: str, message: str, prepare_time: float, start: float) -> NmpcDiagnostics:
        self.events.log_event(event_type, message, level="warning", metadata={"controller": "nmpc"})
        nodes = self.grid.nodes if self.grid is not None else np.zeros((self.cfg.horizon + 1, NX_NONLINEAR))
        return {
            "solve_time": time.perf_counter() - start,
            "prepare_time": prepare_time,
            "iterations": 0,
            "objective": math.nan,
            "kkt_residual": math.nan,
            "step_norm": math.nan,
            "defect_norm": math.nan,
            "fault": True,
            "predicted": nodes,
        }

    def step(
        self, x: MavState, f_ext_est: ArrayLike, ref: ReferenceWindow
    ) -> tuple[AttitudeThrustCommand, NmpcDiagnostics]:
        start = time.perf_counter()
        force = as_vector(f_ext_est, 3, "f_ext_est")
        targets = build_targets(ref, self.params, force, self.psi_rate_max)
        try:
            if self.grid is None:
                self.grid = self._initial_grid(x, targets, force)
            ws = rti_prepare(self.grid, targets, self.problem, force)
        except IntegratorError as e:
            self.grid = None
            return self._last_command, self._fault(
                "integrator_fault", f"nmpc preparation failed, holding previous command: {e}", 0.0, start
            )

        self._tick += 1
        shift = self._tick >= self._ticks_per_node
        try:
            command, grid, diagnostics = rti_feedback(ws, x, force, shift=shift, solver=self.solver)
        except QpSolveError as e:
            return self._last_command, self._fault(
                "qp_fault", f"nmpc qp failed, holding previous command: {e}", ws.prepare_time, start
            )
        if shift:
            self._tick = 0
        self.grid = grid
        self._last_command = command
        diagnostics["solve_time"] = time.perf_counter() - start
        logger.debug(
            f"nmpc step: {diagnostics['iterations']} qp iterations, defect {diagnostics['defect_norm']:.2e}, "
            f"{diagnostics['solve_time'] * 1e3:.3f} ms"
        )
        return command, diagnostics
