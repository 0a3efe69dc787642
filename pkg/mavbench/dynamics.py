"""vehicle model: translational dynamics with lumped rotor drag driven by a first-order attitude loop.

thrust is mass-normalized (m/s^2) everywhere. attitude is Z-Y-X euler, R = Rz(psi) Ry(theta) Rx(phi).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike
from scipy.linalg import expm

from .exceptions import ModelValidityError
from .models import (
    IDX_PHI,
    IDX_PSI,
    IDX_THETA,
    NU,
    NX_LINEAR,
    NX_NONLINEAR,
    AttitudeThrustCommand,
    Mat,
    MavState,
    ModelParams,
    Vec,
)
from .utils import as_vector

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ContinuousModel:
    a: Mat
    b: Mat
    b_d: Mat


@dataclass(frozen=True, eq=False)
class LinearModel:
    """x+ = A x + B u + B_d F_ext on the heading-free hover state (p, v, phi_I, theta_I)"""

    a: Mat
    b: Mat
    b_d: Mat
    dt: float

    @property
    def nx(self) -> int:
        return int(self.a.shape[0])

    @property
    def nu(self) -> int:
        return int(self.b.shape[1])


def rotation_matrix(phi: float, theta: float, psi: float) -> Mat:
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    return np.array(
        [
            [cp * ct, cp * st * sf - sp * cf, cp * st * cf + sp * sf],
            [sp * ct, sp * st * sf + cp * cf, sp * st * cf - cp * sf],
            [-st, ct * sf, ct * cf],
        ]
    )


def _thrust_direction(phi: float, theta: float, psi: float) -> Vec:
    cf, sf = math.cos(phi), math.sin(phi)
    st = math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    return np.array([cf * st * cp + sf * sp, cf * st * sp - sf * cp, cf * math.cos(theta)])


def _thrust_axis(phi: float, theta: float, psi: float) -> tuple[Vec, Mat]:
    # third column of R and its partials w.r.t. (phi, theta, psi) as columns
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    r3 = _thrust_direction(phi, theta, psi)
    d_r3 = np.array(
        [
            [-sf * st * cp + cf * sp, cf * ct * cp, -cf * st * sp + sf * cp],
            [-sf * st * sp - cf * cp, cf * ct * sp, cf * st * cp + sf * sp],
            [-sf * ct, -cf * st, 0.0],
        ]
    )
    return r3, d_r3


def vector_field(x: Vec, u: Vec, psi_rate: float, f_ext: Vec, params: ModelParams) -> Vec:
    """unchecked right-hand side on the 9-entry state, used by the integrators"""
    v = x[3:6]
    thrust = u[2]
    r3 = _thrust_direction(x[IDX_PHI], x[IDX_THETA], x[IDX_PSI])
    # R K R^T v with K = diag(k, k, 0) equals k (v - r3 r3^T v)
    drag = params.k_drag * thrust * (v - r3 * float(r3 @ v))
    dx = np.empty(NX_NONLINEAR)
    dx[0:3] = v
    dx[3:6] = thrust * r3 - drag + f_ext / params.mass
    dx[5] -= params.g
    dx[IDX_PHI] = (params.k_phi * u[0] - x[IDX_PHI]) / params.tau_phi
    dx[IDX_THETA] = (params.k_theta * u[1] - x[IDX_THETA]) / params.tau_theta
    dx[IDX_PSI] = psi_rate
    return dx


def vector_field_jacobians(x: Vec, u: Vec, params: ModelParams) -> tuple[Mat, Mat]:
    """analytic (df/dx, df/du). df/dF_ext is the constant [0; I/m; 0] block"""
    v = x[3:6]
    thrust = u[2]
    k = params.k_drag
    r3, d_r3 = _thrust_axis(x[IDX_PHI], x[IDX_THETA], x[IDX_PSI])
    along = float(r3 @ v)

    jx = np.zeros((NX_NONLINEAR, NX_NONLINEAR))
    jx[0:3, 3:6] = np.eye(3)
    jx[3:6, 3:6] = -k * thrust * (np.eye(3) - np.outer(r3, r3))
    d_acc_d_r3 = thrust * np.eye(3) + k * thrust * (along * np.eye(3) + np.outer(r3, v))
    jx[3:6, 6:9] = d_acc_d_r3 @ d_r3
    jx[IDX_PHI, IDX_PHI] = -1.0 / params.tau_phi
    jx[IDX_THETA, IDX_THETA] = -1.0 / params.tau_theta

    ju = np.zeros((NX_NONLINEAR, NU))
    ju[3:6, 2] = r3 - k * (v - r3 * along)
    ju[IDX_PHI, 0] = params.k_phi / params.tau_phi
    ju[IDX_THETA, 1] = params.k_theta / params.tau_theta
    return jx, ju


def force_input_matrix(params: ModelParams, nx: int = NX_NONLINEAR) -> Mat:
    b_d = np.zeros((nx, 3))
    b_d[3:6, :] = np.eye(3) / params.mass
    return b_d


def eval_dynamics(x: MavState, u: AttitudeThrustCommand, f_ext: ArrayLike, params: ModelParams) -> Vec:
    """state derivative (p_dot, v_dot, phi_dot, theta_dot, psi_dot) of the nonlinear model"""
    force = as_vector(f_ext, 3, "f_ext")
    u_vec = as_vector(u.to_input(), NU, "command")
    psi_rate = as_vector([u.psi_rate_cmd], 1, "psi_rate_cmd")[0]
    if u.thrust_cmd < 0:
        raise ModelValidityError(f"thrust command must be non-negative, got {u.thrust_cmd}")
    return vector_field(x.to_vector(), u_vec, psi_rate, force, params)


def linearize_hover(params: ModelParams) -> ContinuousModel:
    """jacobians at hover (v=0, level, psi=0, T=g) reduced to the heading-free 8-entry state.

    at psi=0 the heading-free angles coincide with body angles, so dropping the psi row
    and column is the whole reduction
    """
    x_eq = np.zeros(NX_NONLINEAR)
    u_eq = np.array([0.0, 0.0, params.g])
    jx, ju = vector_field_jacobians(x_eq, u_eq, params)
    keep = slice(0, NX_LINEAR)
    return ContinuousModel(
        a=jx[keep, keep].copy(),
        b=ju[keep, :].copy(),
        b_d=force_input_matrix(params, NX_LINEAR),
    )


def discretize_zoh(cont: ContinuousModel, dt: float) -> LinearModel:
    if not dt > 0:
        raise ModelValidityError(f"discretization step must be positive, got {dt}")
    n = cont.a.shape[0]
    m = cont.b.shape[1]
    md = cont.b_d.shape[1]
    # inputs and disturbance are held over the interval: exponential of the augmented system
    aug = np.zeros((n + m + md, n + m + md))
    aug[:n, :n] = cont.a
    aug[:n, n : n + m] = cont.b
    aug[:n, n + m :] = cont.b_d
    phi = expm(aug * dt)
    return LinearModel(a=phi[:n, :n], b=phi[:n, n : n + m], b_d=phi[:n, n + m :], dt=dt)


def rotate_cmd_to_body(phi_i: float, theta_i: float, psi: float) -> tuple[float, float]:
    cp, sp = math.cos(psi), math.sin(psi)
    return cp * phi_i + sp * theta_i, -sp * phi_i + cp * theta_i


def rotate_body_to_inertial(phi: float, theta: float, psi: float) -> tuple[float, float]:
    cp, sp = math.cos(psi), math.sin(psi)
    return cp * phi - sp * theta, sp * phi + cp * theta


def to_body_frame(vec_inertial: Vec, psi: float) -> Vec:
    # heading-only rotation, the frame the feed-forward accelerations are expressed in
    cp, sp = math.cos(psi), math.sin(psi)
    x, y, z = vec_inertial
    return np.array([cp * x + sp * y, -sp * x + cp * y, z])


def compensate_thrust(t_cmd: float, phi: float, theta: float, params: ModelParams) -> float:
    if not (abs(phi) < math.pi / 2 and abs(theta) < math.pi / 2):
        raise ModelValidityError(f"thrust compensation singular at phi={phi:.4f}, theta={theta:.4f}")
    thrust = (t_cmd + params.g) / (math.cos(phi) * math.cos(theta))
    return min(max(thrust, params.limits.thrust_min), params.limits.thrust_max)


def heading_free_state(x: MavState) -> Vec:
    """8-entry linear-model state from the full state"""
    phi_i, theta_i = rotate_body_to_inertial(x.phi, x.theta, x.psi)
    return np.concatenate([x.p, x.v, [phi_i, theta_i]])
