from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .exceptions import ModelValidityError

Vec = NDArray[np.float64]
Mat = NDArray[np.float64]

# inertial force in newtons, held constant over a prediction horizon
ExternalForce = Vec

GRAVITY = 9.81

# state layouts. the nonlinear model carries heading, the hover model drops it and
# expresses roll/pitch in the heading-free inertial frame
NX_NONLINEAR = 9
NX_LINEAR = 8
NU = 3
IDX_P = slice(0, 3)
IDX_V = slice(3, 6)
IDX_PHI = 6
IDX_THETA = 7
IDX_PSI = 8

# table values of the reference hexacopter. thrust bounds are given in newtons and
# converted once to mass-normalized units
NEO_MASS = 3.42
NEO_THRUST_MIN_N = 13.5
NEO_THRUST_MAX_N = 40.3
NEO_TILT_LIMIT = math.radians(45.0)

DEFAULT_Q_POSITION = (300.0, 300.0, 120.0)
DEFAULT_Q_VELOCITY = (40.0, 40.0, 100.0)
DEFAULT_Q_ATTITUDE = (10.0, 10.0)
DEFAULT_R_COMMAND = (10.0, 10.0, 1.0)
DEFAULT_Q_YAW = 10.0


@dataclass(frozen=True)
class InputLimits:
    phi_min: float = -NEO_TILT_LIMIT
    phi_max: float = NEO_TILT_LIMIT
    theta_min: float = -NEO_TILT_LIMIT
    theta_max: float = NEO_TILT_LIMIT
    thrust_min: float = NEO_THRUST_MIN_N / NEO_MASS
    thrust_max: float = NEO_THRUST_MAX_N / NEO_MASS

    def __post_init__(self) -> None:
        pairs = (
            ("phi", self.phi_min, self.phi_max),
            ("theta", self.theta_min, self.theta_max),
            ("thrust", self.thrust_min, self.thrust_max),
        )
        for name, lo, hi in pairs:
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
                raise ModelValidityError(f"invalid {name} limits [{lo}, {hi}]")

    @classmethod
    def from_newtons(
        cls, mass: float, thrust_min_n: float, thrust_max_n: float, tilt_limit: float = NEO_TILT_LIMIT
    ) -> InputLimits:
        if mass <= 0:
            raise ModelValidityError(f"mass must be positive, got {mass}")
        return cls(
            phi_min=-tilt_limit,
            phi_max=tilt_limit,
            theta_min=-tilt_limit,
            theta_max=tilt_limit,
            thrust_min=thrust_min_n / mass,
            thrust_max=thrust_max_n / mass,
        )

    def lower(self) -> Vec:
        return np.array([self.phi_min, self.theta_min, self.thrust_min])

    def upper(self) -> Vec:
        return np.array([self.phi_max, self.theta_max, self.thrust_max])


@dataclass(frozen=True)
class ModelParams:
    """vehicle model: mass, lumped rotor drag and the identified first-order attitude loop"""

    mass: float = NEO_MASS
    g: float = GRAVITY
    # per unit of mass-normalized thrust; not identified on the vehicle, a tuning knob
    k_drag: float = 0.01
    tau_phi: float = 0.1901
    tau_theta: float = 0.1721
    k_phi: float = 0.91
    k_theta: float = 0.96
    limits: InputLimits = field(default_factory=InputLimits)

    def __post_init__(self) -> None:
        checks = {
            "mass": self.mass > 0,
            "g": self.g > 0,
            "k_drag": self.k_drag >= 0,
            "tau_phi": self.tau_phi > 0,
            "tau_theta": self.tau_theta > 0,
            "k_phi": self.k_phi > 0,
            "k_theta": self.k_theta > 0,
        }
        for name, ok in checks.items():
            value = getattr(self, name)
            if not ok or not math.isfinite(value):
                raise ModelValidityError(f"invalid model parameter {name}={value}")


@dataclass(frozen=True)
class MavState:
    p: Vec
    v: Vec
    phi: float = 0.0
    theta: float = 0.0
    psi: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "p", np.asarray(self.p, dtype=np.float64).reshape(3))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=np.float64).reshape(3))
        if not np.all(np.isfinite(self.to_vector())):
            raise ModelValidityError(f"non-finite vehicle state {self.to_vector()}")

    @classmethod
    def hover(cls, position: Vec | None = None, psi: float = 0.0) -> MavState:
        p = np.zeros(3) if position is None else position
        return cls(p=p, v=np.zeros(3), psi=psi)

    @classmethod
    def from_vector(cls, x: Vec) -> MavState:
        x = np.asarray(x, dtype=np.float64)
        return cls(p=x[IDX_P], v=x[IDX_V], phi=float(x[IDX_PHI]), theta=float(x[IDX_THETA]), psi=float(x[IDX_PSI]))

    def to_vector(self) -> Vec:
        return np.concatenate([self.p, self.v, [self.phi, self.theta, self.psi]])

    def in_validity_region(self) -> bool:
        return abs(self.phi) < math.pi / 2 and abs(self.theta) < math.pi / 2


@dataclass(frozen=True)
class AttitudeThrustCommand:
    phi_cmd: float
    theta_cmd: float
    psi_rate_cmd: float
    thrust_cmd: float

    @classmethod
    def hover(cls, params: ModelParams) -> AttitudeThrustCommand:
        return cls(0.0, 0.0, 0.0, params.g)

    @classmethod
    def from_input(cls, u: Vec, psi_rate_cmd: float = 0.0) -> AttitudeThrustCommand:
        return cls(float(u[0]), float(u[1]), float(psi_rate_cmd), float(u[2]))

    def to_input(self) -> Vec:
        return np.array([self.phi_cmd, self.theta_cmd, self.thrust_cmd])

    def within(self, limits: InputLimits) -> bool:
        u = self.to_input()
        return bool(np.all(u >= limits.lower()) and np.all(u <= limits.upper()))


def default_q_x() -> Mat:
    return np.diag([*DEFAULT_Q_POSITION, *DEFAULT_Q_VELOCITY, *DEFAULT_Q_ATTITUDE])


def default_r_u() -> Mat:
    return np.diag(DEFAULT_R_COMMAND)


# ndarray fields, so eq=False keeps dataclass comparison from tripping on elementwise ==
@dataclass(frozen=True, eq=False)
class OcpConfig:
    horizon: int = 20
    dt_pred: float = 0.1
    q_x: Mat = field(default_factory=default_q_x)
    r_u: Mat = field(default_factory=default_r_u)
    # None derives the terminal weight from the riccati equation of the hover model
    p_terminal: Mat | None = None
    q_yaw: float = DEFAULT_Q_YAW
    psi_rate_max: float | None = None

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ModelValidityError(f"horizon must be >= 1, got {self.horizon}")
        if not self.dt_pred > 0:
            raise ModelValidityError(f"dt_pred must be positive, got {self.dt_pred}")
        for name in ("q_x", "r_u", "p_terminal"):
            mat = getattr(self, name)
            if mat is None:
                continue
            mat = np.asarray(mat, dtype=np.float64)
            object.__setattr__(self, name, mat)
            if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or not np.allclose(mat, mat.T):
                raise ModelValidityError(f"{name} must be a symmetric square matrix")
            eig_min = float(np.linalg.eigvalsh(mat).min())
            if name == "r_u" and eig_min <= 0:
                raise ModelValidityError(f"r_u must be positive definite, min eigenvalue {eig_min}")
            if eig_min < -1e-12:
                raise ModelValidityError(f"{name} must be positive semidefinite, min eigenvalue {eig_min}")
        if self.q_yaw < 0:
            raise ModelValidityError(f"q_yaw must be non-negative, got {self.q_yaw}")

    def same_weights(self, other: OcpConfig) -> bool:
        def _eq(a: Mat | None, b: Mat | None) -> bool:
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and bool(np.array_equal(a, b))

        return (
            _eq(self.q_x, other.q_x)
            and _eq(self.r_u, other.r_u)
            and _eq(self.p_terminal, other.p_terminal)
            and self.horizon == other.horizon
            and self.dt_pred == other.dt_pred
        )


@dataclass(frozen=True)
class NoiseConfig:
    """filter tuning. process entries are spectral densities per second, measurement entries are std devs"""

    q_position: float = 1e-6
    q_velocity: float = 1e-4
    q_attitude: float = 1e-5
    q_force: float = 0.5
    sigma_position: float = 1e-3
    sigma_velocity: float = 1e-2
    sigma_attitude: float = math.radians(0.2)

    def __post_init__(self) -> None:
        for name, value in vars(self).items():
            if not value > 0 or not math.isfinite(value):
                raise ModelValidityError(f"noise setting {name} must be positive, got {value}")

    def measurement_std(self) -> Vec:
        return np.array([self.sigma_position] * 3 + [self.sigma_velocity] * 3 + [self.sigma_attitude] * 3)
