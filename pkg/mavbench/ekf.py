"""augmented-state EKF: vehicle state plus a random-walk external force, measured by full pose and velocity"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .exceptions import EstimatorError, IntegratorError, MavBenchException
from .integrator import integrate_step
from .models import IDX_PSI, NX_NONLINEAR, AttitudeThrustCommand, Mat, ModelParams, NoiseConfig, Vec
from .utils import as_vector, symmetrize, wrap_angle

logger = logging.getLogger(__name__)

NX_AUGMENTED = NX_NONLINEAR + 3
IDX_FORCE = slice(NX_NONLINEAR, NX_AUGMENTED)
DEFAULT_FORCE_PRIOR_STD = 2.0


@dataclass(frozen=True, eq=False)
class EkfState:
    x: Vec
    cov: Mat

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=np.float64).reshape(-1)
        cov = np.asarray(self.cov, dtype=np.float64)
        if x.size != NX_AUGMENTED or cov.shape != (NX_AUGMENTED, NX_AUGMENTED):
            raise EstimatorError(f"ekf state must be {NX_AUGMENTED} entries with square covariance")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(cov))):
            raise EstimatorError("ekf state contains non-finite entries")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "cov", cov)

    @property
    def force(self) -> Vec:
        return self.x[IDX_FORCE].copy()

    @property
    def force_cov(self) -> Mat:
        return self.cov[IDX_FORCE, IDX_FORCE].copy()

    @classmethod
    def initial(
        cls, measurement: ArrayLike, noise: NoiseConfig, force_prior_std: float = DEFAULT_FORCE_PRIOR_STD
    ) -> EkfState:
        z = as_vector(measurement, NX_NONLINEAR, "measurement")
        variances = np.concatenate([noise.measurement_std() ** 2, np.full(3, force_prior_std**2)])
        return cls(x=np.concatenate([z, np.zeros(3)]), cov=np.diag(variances))


def process_noise(noise: NoiseConfig, dt: float) -> Mat:
    densities = [noise.q_position] * 3 + [noise.q_velocity] * 3 + [noise.q_attitude] * 3 + [noise.q_force] * 3
    return np.diag(densities) * dt


def ekf_predict(
    state: EkfState, u: AttitudeThrustCommand, dt: float, params: ModelParams, noise: NoiseConfig
) -> EkfState:
    try:
        step = integrate_step(
            state.x[:NX_NONLINEAR], u.to_input(), state.x[IDX_FORCE], dt, params, psi_rate=u.psi_rate_cmd
        )
    except IntegratorError as e:
        raise EstimatorError(f"prediction failed: {e}")
    except MavBenchException as e:
        raise EstimatorError(f"prediction rejected: {e}")

    jac = np.eye(NX_AUGMENTED)
    jac[:NX_NONLINEAR, :NX_NONLINEAR] = step.dx
    jac[:NX_NONLINEAR, IDX_FORCE] = step.df
    x_next = np.concatenate([step.x_next, state.x[IDX_FORCE]])
    x_next[IDX_PSI] = wrap_angle(x_next[IDX_PSI])
    cov = symmetrize(jac @ state.cov @ jac.T + process_noise(noise, dt))
    return EkfState(x=x_next, cov=cov)


def ekf_update(state: EkfState, measurement: ArrayLike, noise: NoiseConfig) -> EkfState:
    """measurement is (p, v, phi, theta, psi); joseph-form covariance update"""
    try:
        z = as_vector(measurement, NX_NONLINEAR, "measurement")
    except MavBenchException as e:
        raise EstimatorError(str(e))

    innovation = z - state.x[:NX_NONLINEAR]
    innovation[IDX_PSI] = wrap_angle(innovation[IDX_PSI])
    meas_cov = np.diag(noise.measurement_std() ** 2)
    s = state.cov[:NX_NONLINEAR, :NX_NONLINEAR] + meas_cov
    try:
        factor = cho_factor(s, lower=True)
    except (LinAlgError, ValueError) as e:
        raise EstimatorError(f"innovation covariance not invertible: {e}")
    gain = cho_solve(factor, state.cov[:NX_NONLINEAR, :]).T

    x_next = state.x + gain @ innovation
    x_next[IDX_PSI] = wrap_angle(x_next[IDX_PSI])
    i_kh = np.eye(NX_AUGMENTED)
    i_kh[:, :NX_NONLINEAR] -= gain
    cov = symmetrize(i_kh @ state.cov @ i_kh.T + gain @ meas_cov @ gain.T)
    return EkfState(x=x_next, cov=cov)


class DisturbanceEkf:
    """single-writer wrapper that keeps the running estimate and the control period"""

    def __init__(
        self,
        params: ModelParams,
        noise: NoiseConfig,
        dt: float = 0.01,
        force_prior_std: float = DEFAULT_FORCE_PRIOR_STD,
    ) -> None:
        self.params = params
        self.noise = noise
        self.dt = dt
        self.force_prior_std = force_prior_std
        self.state: EkfState | None = None

    def update(self, measurement: ArrayLike) -> EkfState:
        if self.state is None:
            self.state = EkfState.initial(measurement, self.noise, self.force_prior_std)
            logger.debug("ekf initialized from first measurement")
        else:
            self.state = ekf_update(self.state, measurement, self.noise)
        return self.state

    def predict(self, u: AttitudeThrustCommand) -> EkfState:
        if self.state is None:
            raise EstimatorError("ekf predict called before the first measurement")
        self.state = ekf_predict(self.state, u, self.dt, self.params, self.noise)
        return self.state
