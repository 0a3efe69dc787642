"""reference trajectories (hover, step, piecewise polynomial) and their sampling onto the prediction grid"""

from __future__ import annotations

import bisect
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from numpy.polynomial import Polynomial
from numpy.typing import ArrayLike

from .dynamics import to_body_frame
from .exceptions import ModelValidityError
from .lmpc import ReferenceWindow, build_feedforward
from .models import GRAVITY, NX_LINEAR, ModelParams, Vec
from .utils import as_vector

logger = logging.getLogger(__name__)

MAX_DEGREE = 11

# figure-eight preset: peak speed sqrt(2) A w = 4 m/s, peak lateral (y) acceleration 2 A w^2 = g/2
FIGURE8_PEAK_SPEED = 4.0
FIGURE8_PEAK_ACCEL = 0.5 * GRAVITY
FIGURE8_OMEGA = FIGURE8_PEAK_ACCEL / (math.sqrt(2.0) * FIGURE8_PEAK_SPEED)
FIGURE8_AMPLITUDE = FIGURE8_PEAK_SPEED / (math.sqrt(2.0) * FIGURE8_OMEGA)
FIGURE8_FIT_SAMPLES = 400


@dataclass(frozen=True)
class RefSample:
    p: Vec
    v: Vec
    a: Vec
    yaw: float = 0.0
    yaw_rate: float = 0.0

    @classmethod
    def at_rest(cls, p: Vec, yaw: float = 0.0) -> RefSample:
        return cls(p=np.array(p, dtype=np.float64), v=np.zeros(3), a=np.zeros(3), yaw=yaw)


class Trajectory(Protocol):
    @property
    def duration(self) -> float: ...

    def sample(self, t: float) -> RefSample: ...


@dataclass(frozen=True)
class StepTrajectory:
    """holds `start` until t_step, then `target`; hover is the degenerate case start == target"""

    start: tuple[float, ...]
    target: tuple[float, ...]
    t_step: float = 0.0
    yaw: float = 0.0

    @property
    def duration(self) -> float:
        return self.t_step

    def sample(self, t: float) -> RefSample:
        return RefSample.at_rest(np.array(self.target if t >= self.t_step else self.start), self.yaw)


@dataclass(frozen=True, eq=False)
class PolySegment:
    axes: tuple[Polynomial, Polynomial, Polynomial]
    duration: float
    yaw: Polynomial = field(default_factory=lambda: Polynomial([0.0]))

    def __post_init__(self) -> None:
        if not (self.duration > 0 and math.isfinite(self.duration)):
            raise ModelValidityError(f"segment duration must be positive, got {self.duration}")
        for poly in (*self.axes, self.yaw):
            if poly.degree() > MAX_DEGREE:
                raise ModelValidityError(f"segment polynomial degree {poly.degree()} exceeds {MAX_DEGREE}")
            if not np.all(np.isfinite(poly.coef)):
                raise ModelValidityError("segment polynomial has non-finite coefficients")

    @classmethod
    def from_coefficients(
        cls, coefficients: Sequence[Sequence[float]], duration: float, yaw: Sequence[float] = (0.0,)
    ) -> PolySegment:
        """coefficients per axis in increasing powers of local time"""
        if len(coefficients) != 3:
            raise ModelValidityError(f"segment needs coefficients for 3 axes, got {len(coefficients)}")
        x, y, z = (Polynomial(np.asarray(c, dtype=np.float64)) for c in coefficients)
        return cls(axes=(x, y, z), duration=float(duration), yaw=Polynomial(np.asarray(yaw, dtype=np.float64)))

    def sample(self, tau: float) -> RefSample:
        p = np.array([poly(tau) for poly in self.axes])
        v = np.array([poly.deriv(1)(tau) for poly in self.axes])
        a = np.array([poly.deriv(2)(tau) for poly in self.axes])
        return RefSample(p=p, v=v, a=a, yaw=float(self.yaw(tau)), yaw_rate=float(self.yaw.deriv(1)(tau)))


@dataclass(frozen=True, eq=False)
class PolyTrajectory:
    segments: tuple[PolySegment, ...]
    _starts: tuple[float, ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not self.segments:
            raise ModelValidityError("polynomial trajectory needs at least one segment")
        starts = [0.0]
        for seg in self.segments[:-1]:
            starts.append(starts[-1] + seg.duration)
        object.__setattr__(self, "_starts", tuple(starts))

    @property
    def duration(self) -> float:
        return self._starts[-1] + self.segments[-1].duration

    def sample(self, t: float) -> RefSample:
        # outside the span: hold the endpoint at rest
        if t <= 0.0:
            first = self.segments[0].sample(0.0)
            return RefSample.at_rest(first.p, first.yaw)
        if t >= self.duration:
            last = self.segments[-1].sample(self.segments[-1].duration)
            return RefSample.at_rest(last.p, last.yaw)
        idx = bisect.bisect_right(self._starts, t) - 1
        return self.segments[idx].sample(t - self._starts[idx])


def hover(position: ArrayLike = (0.0, 0.0, 1.0), yaw: float = 0.0) -> StepTrajectory:
    p = tuple(float(c) for c in as_vector(position, 3, "position"))
    return StepTrajectory(start=p, target=p, yaw=yaw)


def step(
    start: ArrayLike = (0.0, 0.0, 1.0), offset: ArrayLike = (2.0, 0.0, 0.0), t_step: float = 1.0
) -> StepTrajectory:
    p0 = as_vector(start, 3, "start")
    p1 = p0 + as_vector(offset, 3, "offset")
    return StepTrajectory(start=tuple(p0.tolist()), target=tuple(p1.tolist()), t_step=t_step)


def figure8(center: ArrayLike = (0.0, 0.0, 1.0), laps: int = 1, degree: int = MAX_DEGREE) -> PolyTrajectory:
    """lemniscate x = A sin wt, y = A/2 sin 2wt fit by least squares on two half-period segments per lap"""
    if laps < 1:
        raise ModelValidityError(f"figure8 needs at least one lap, got {laps}")
    c = as_vector(center, 3, "center")
    a, w = FIGURE8_AMPLITUDE, FIGURE8_OMEGA
    half = math.pi / w
    segments = []
    for k in range(2):
        t = np.linspace(0.0, half, FIGURE8_FIT_SAMPLES)
        tg = t + k * half
        axes = (
            Polynomial.fit(t, c[0] + a * np.sin(w * tg), degree, domain=[0.0, half]),
            Polynomial.fit(t, c[1] + 0.5 * a * np.sin(2.0 * w * tg), degree, domain=[0.0, half]),
            Polynomial([c[2]]),
        )
        segments.append(PolySegment(axes=axes, duration=half))
    logger.debug(f"figure8 fit: amplitude {a:.3f} m, omega {w:.4f} rad/s, lap {2 * half:.3f} s")
    return PolyTrajectory(segments=tuple(segments) * laps)


def sample(traj: Trajectory, t: float) -> RefSample:
    return traj.sample(t)


def window(
    traj: Trajectory,
    t0: float,
    horizon: int,
    dt_pred: float,
    psi: float = 0.0,
    params: ModelParams | None = None,
) -> ReferenceWindow:
    """N+1 node references from t0 on the prediction grid.

    the input references are the feed-forward terms built from the body-frame reference
    acceleration at the current heading; the attitude rows carry the angles those inputs settle to
    """
    if horizon < 1 or not dt_pred > 0:
        raise ModelValidityError(f"invalid window grid: horizon {horizon}, dt_pred {dt_pred}")
    params = params if params is not None else ModelParams()
    samples = [traj.sample(t0 + k * dt_pred) for k in range(horizon + 1)]
    position = np.array([s.p for s in samples])
    velocity = np.array([s.v for s in samples])
    acceleration = np.array([s.a for s in samples])

    u_ff = build_feedforward(np.array([to_body_frame(a, psi) for a in acceleration]), params.g)
    x_ref = np.zeros((horizon + 1, NX_LINEAR))
    x_ref[:, 0:3] = position
    x_ref[:, 3:6] = velocity
    x_ref[:, 6] = params.k_phi * u_ff[:, 0]
    x_ref[:, 7] = params.k_theta * u_ff[:, 1]
    return ReferenceWindow(
        x_ref=x_ref,
        u_ref=u_ff[:-1],
        position=position,
        velocity=velocity,
        acceleration=acceleration,
        yaw=np.array([s.yaw for s in samples]),
        yaw_rate=np.array([s.yaw_rate for s in samples]),
    )
