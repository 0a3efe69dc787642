"""closed-loop plant: explicit RK4 truth model at the substep rate, wind injection, noisy full-state
measurements, and the 100 Hz controller/estimator sequence"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
try:
    from enum import StrEnum
except ImportError:  # python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):  # type: ignore[no-redef]
        __str__ = str.__str__
        __format__ = str.__format__
from functools import cached_property
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .dynamics import vector_field
from .ekf import DisturbanceEkf
from .event_logger import EventDict, EventLogger
from .exceptions import EstimatorError, MavBenchException, ModelValidityError, SimulationError
from .lmpc import LinearMpc
from .models import (
    NX_NONLINEAR,
    AttitudeThrustCommand,
    Mat,
    MavState,
    ModelParams,
    OcpConfig,
    Vec,
)
from .nmpc import NonlinearMpc
from .trajectory import window
from .utils import as_vector

if TYPE_CHECKING:
    from .config import ScenarioConfig

logger = logging.getLogger(__name__)

# one column per entry, in this order. timing lives in a separate file so logs stay bit-reproducible
LOG_COLUMNS = (
    "t",
    "x", "y", "z", "vx", "vy", "vz", "phi", "theta", "psi",
    "meas_x", "meas_y", "meas_z", "meas_vx", "meas_vy", "meas_vz", "meas_phi", "meas_theta", "meas_psi",
    "ref_x", "ref_y", "ref_z", "ref_psi",
    "cmd_phi", "cmd_theta", "cmd_psi_rate", "cmd_thrust",
    "fhat_x", "fhat_y", "fhat_z",
    "f_x", "f_y", "f_z",
    "fault",
)  # fmt: skip
TIMING_COLUMNS = ("t", "solve_time")


class WindMode(StrEnum):
    OFF = "off"
    CONSTANT = "constant"
    GUSTY = "gusty"


@dataclass(frozen=True)
class WindProfile:
    """external force on the vehicle.

    `speed` (m/s along `direction`) maps to force through F = c_w v when given, otherwise
    `force` (N) is used directly. gusts are a seeded sum of sinusoids, so the profile is a
    pure function of time
    """

    mode: WindMode = WindMode.OFF
    force: tuple[float, ...] = (0.0, 0.0, 0.0)
    speed: float | None = None
    direction: tuple[float, ...] = (1.0, 0.0, 0.0)
    drag_coefficient: float = 0.3
    gust_std: float = 0.5
    gust_bandwidth: float = 1.0
    gust_components: int = 16
    seed: int = 0

    def __post_init__(self) -> None:
        as_vector(self.force, 3, "wind force")
        direction = as_vector(self.direction, 3, "wind direction")
        if self.speed is not None and float(np.linalg.norm(direction)) == 0.0:
            raise ModelValidityError("wind direction must be non-zero when a speed is given")
        if self.gust_std < 0 or self.gust_bandwidth <= 0 or self.gust_components < 1 or self.drag_coefficient < 0:
            raise ModelValidityError("gust parameters must be non-negative with positive bandwidth and components")

    @cached_property
    def mean_force(self) -> Vec:
        if self.mode is WindMode.OFF:
            return np.zeros(3)
        if self.speed is None:
            return np.array(self.force, dtype=np.float64)
        direction = np.array(self.direction, dtype=np.float64)
        return self.drag_coefficient * self.speed * direction / float(np.linalg.norm(direction))

    @cached_property
    def gust_table(self) -> tuple[Vec, Mat, float]:
        rng = np.random.default_rng(self.seed)
        freqs = rng.uniform(0.0, self.gust_bandwidth, size=self.gust_components)
        phases = rng.uniform(0.0, 2.0 * math.pi, size=(self.gust_components, 3))
        # each component carries variance a^2/2, so the sum has gust_std^2 per axis
        amplitude = self.gust_std * math.sqrt(2.0 / self.gust_components)
        return 2.0 * math.pi * freqs, phases, amplitude


def inject_wind(profile: WindProfile, t: float) -> Vec:
    if profile.mode is not WindMode.GUSTY:
        return profile.mean_force.copy()
    omegas, phases, amplitude = profile.gust_table
    return profile.mean_force + amplitude * np.sin(omegas[:, None] * t + phases).sum(axis=0)


@dataclass(frozen=True)
class PlantMismatch:
    mass_scale: float = 1.0
    drag_scale: float = 1.0
    tau_scale: float = 1.0

    def __post_init__(self) -> None:
        for name, value in vars(self).items():
            if not value > 0 or not math.isfinite(value):
                raise ModelValidityError(f"plant mismatch {name} must be positive, got {value}")

    def apply(self, nominal: ModelParams) -> ModelParams:
        return dataclasses.replace(
            nominal,
            mass=nominal.mass * self.mass_scale,
            k_drag=nominal.k_drag * self.drag_scale,
            tau_phi=nominal.tau_phi * self.tau_scale,
            tau_theta=nominal.tau_theta * self.tau_scale,
        )


class Plant:
    """truth model. commanded thrust is mass-normalized by the nominal mass, so a heavier
    vehicle gets proportionally less acceleration out of the same command"""

    def __init__(self, nominal: ModelParams, mismatch: PlantMismatch | None = None) -> None:
        self.mismatch = mismatch if mismatch is not None else PlantMismatch()
        self.params = self.mismatch.apply(nominal)
        self.thrust_scale = nominal.mass / self.params.mass

    def derivative(self, x: Vec, cmd: AttitudeThrustCommand, force: Vec) -> Vec:
        u = np.array([cmd.phi_cmd, cmd.theta_cmd, cmd.thrust_cmd * self.thrust_scale])
        return vector_field(x, u, cmd.psi_rate_cmd, force, self.params)

    def rk4_step(self, x: Vec, cmd: AttitudeThrustCommand, force: Vec, dt: float) -> Vec:
        k1 = self.derivative(x, cmd, force)
        k2 = self.derivative(x + 0.5 * dt * k1, cmd, force)
        k3 = self.derivative(x + 0.5 * dt * k2, cmd, force)
        k4 = self.derivative(x + dt * k3, cmd, force)
        return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def advance(
        self, x: Vec, cmd: AttitudeThrustCommand, wind: WindProfile, t0: float, dt: float, substeps: int
    ) -> tuple[Vec, Vec]:
        """hold `cmd` over one control tick; wind sampled at each substep start. returns (x, mean force)"""
        h = dt / substeps
        total = np.zeros(3)
        for i in range(substeps):
            force = inject_wind(wind, t0 + i * h)
            total += force
            x = self.rk4_step(x, cmd, force, h)
        return x, total / substeps


def build_controller(
    kind: str, params: ModelParams, ocp: OcpConfig, control_dt: float, events: EventLogger
) -> LinearMpc | NonlinearMpc:
    if kind == "lmpc":
        return LinearMpc(params, ocp, control_dt=control_dt, events=events)
    if kind == "nmpc":
        return NonlinearMpc(params, ocp, control_dt=control_dt, events=events)
    raise ModelValidityError(f"unknown controller {kind!r}")


@dataclass(eq=False)
class SimLog:
    scenario: str
    controller: str
    rows: Mat
    solve_time: Vec
    events: list[EventDict] = field(default_factory=list)

    def column(self, name: str) -> Vec:
        return self.rows[:, LOG_COLUMNS.index(name)]

    def columns(self, *names: str) -> Mat:
        return self.rows[:, [LOG_COLUMNS.index(n) for n in names]]

    @property
    def t(self) -> Vec:
        return self.column("t")

    @property
    def position(self) -> Mat:
        return self.columns("x", "y", "z")

    @property
    def reference(self) -> Mat:
        return self.columns("ref_x", "ref_y", "ref_z")

    @property
    def thrust_cmd(self) -> Vec:
        return self.column("cmd_thrust")

    def __len__(self) -> int:
        return int(self.rows.shape[0])

    def to_csv(self, path: Path) -> None:
        np.savetxt(path, self.rows, delimiter=",", header=",".join(LOG_COLUMNS), comments="", fmt="%.17g")

    def timing_to_csv(self, path: Path) -> None:
        data = np.column_stack([self.t, self.solve_time])
        np.savetxt(path, data, delimiter=",", header=",".join(TIMING_COLUMNS), comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path: Path, timing_path: Path | None = None, scenario: str = "", controller: str = "") -> SimLog:
        with open(path) as f:
            header = f.readline().strip().split(",")
        if tuple(header) != LOG_COLUMNS:
            raise SimulationError(f"{path} does not have the simulation log header")
        rows = np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.float64))
        solve_time = np.zeros(rows.shape[0])
        if timing_path is not None and timing_path.exists():
            timing = np.atleast_2d(np.loadtxt(timing_path, delimiter=",", skiprows=1, dtype=np.float64))
            solve_time = timing[:, 1]
        return cls(scenario=scenario, controller=controller, rows=rows, solve_time=solve_time)


class SimClock:
    def __init__(self) -> None:
        self.now = 0.0

    def __call__(self) -> float:
        return self.now


def _validity_violation(x: Vec) -> bool:
    return not np.all(np.isfinite(x)) or not MavState.from_vector(x).in_validity_region()


def run_scenario(cfg: ScenarioConfig, controller: str | None = None) -> SimLog:
    """one closed-loop run. raises SimulationError carrying the partial log when the plant
    leaves the model validity region"""
    kind = controller if controller is not None else cfg.controllers()[0]
    params = cfg.model_params()
    ocp = cfg.ocp_config()
    noise = cfg.noise_config()
    wind = cfg.wind_profile()
    traj = cfg.trajectory()
    dt = cfg.control_dt
    substeps = cfg.substeps
    n_ticks = int(round(cfg.duration / dt))

    clock = SimClock()
    events = EventLogger(clock=clock, scenario=f"{cfg.name}/{kind}")
    ctrl = build_controller(kind, params, ocp, dt, events)
    plant = Plant(params, cfg.plant_mismatch())
    ekf = DisturbanceEkf(params, noise, dt=dt, force_prior_std=cfg.force_prior_std) if cfg.ekf_enabled else None
    rng = np.random.default_rng(cfg.seed)
    meas_std = noise.measurement_std()

    start = traj.sample(0.0)
    x = np.concatenate([start.p, start.v, [0.0, 0.0, start.yaw]])
    rows = np.zeros((n_ticks, len(LOG_COLUMNS)))
    solve_time = np.zeros(n_ticks)

    events.log_event(
        "scenario_started",
        f"{kind} on {cfg.kind} for {cfg.duration}s",
        metadata={"seed": cfg.seed, "ekf": cfg.ekf_enabled, "wind": wind.mode.value},
    )

    def _partial(n: int) -> SimLog:
        return SimLog(cfg.name, kind, rows[:n].copy(), solve_time[:n].copy(), events.get_recent_events(limit=0))

    for i in range(n_ticks):
        t = i * dt
        clock.now = t
        meas = x + rng.normal(0.0, meas_std) if cfg.noise_enabled else x.copy()

        if ekf is not None:
            try:
                est = ekf.update(meas)
                x_hat, f_hat = est.x[:NX_NONLINEAR], est.force
            except EstimatorError as e:
                events.log_event("estimator_fault", f"ekf reset: {e}", level="warning")
                ekf.state = None
                x_hat, f_hat = meas, np.zeros(3)
        else:
            x_hat, f_hat = meas, np.zeros(3)

        try:
            state = MavState.from_vector(x_hat)
            ref = window(traj, t, ocp.horizon, ocp.dt_pred, psi=state.psi, params=params)
            cmd, diag = ctrl.step(state, f_hat, ref)
        except MavBenchException as e:
            events.log_event("scenario_aborted", f"controller failed at t={t:.2f}s: {e}", level="error")
            raise SimulationError(f"{cfg.name}/{kind} controller failed at t={t:.2f}s: {e}", log=_partial(i))

        x_next, f_true = plant.advance(x, cmd, wind, t, dt, substeps)
        ref_now = ref.position[0] if ref.position is not None else ref.x_ref[0, 0:3]
        ref_yaw = float(ref.yaw[0]) if ref.yaw is not None else 0.0
        rows[i] = np.concatenate(
            [
                [t],
                x,
                meas,
                ref_now,
                [ref_yaw],
                [cmd.phi_cmd, cmd.theta_cmd, cmd.psi_rate_cmd, cmd.thrust_cmd],
                f_hat,
                f_true,
                [1.0 if diag["fault"] else 0.0],
            ]
        )
        solve_time[i] = diag["solve_time"]

        if _validity_violation(x_next):
            clock.now = t + dt
            events.log_event("scenario_aborted", f"attitude left the validity region at t={t + dt:.2f}s", level="error")
            raise SimulationError(
                f"{cfg.name}/{kind}: plant left the model validity region at t={t + dt:.2f}s", log=_partial(i + 1)
            )
        x = x_next

        if ekf is not None and ekf.state is not None:
            try:
                ekf.predict(cmd)
            except EstimatorError as e:
                events.log_event("estimator_fault", f"ekf prediction failed, reset: {e}", level="warning")
                ekf.state = None

    clock.now = n_ticks * dt
    events.log_event(
        "scenario_finished",
        f"{n_ticks} ticks, {int(rows[:, -1].sum())} faulted",
        metadata={"faults": int(rows[:, -1].sum())},
    )
    return SimLog(cfg.name, kind, rows, solve_time, events.get_recent_events(limit=0))
