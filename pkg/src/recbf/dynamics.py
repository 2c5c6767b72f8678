"""Quadrotor truth model, reduced double-integrator model, attitude recovery.

World frame is z-up. Gravity is the vector ``g * e3`` with ``g = -9.81`` and
thrust acts along the body-up axis ``b3 = R_b e3``, so translational
acceleration is ``g e3 + (F/m) R_b e3``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .estimator import LinearizedSystem
from .numkit import as_mat, as_vec

E3 = np.array([0.0, 0.0, 1.0])
MAX_TILT = math.radians(80.0)

CRAZYFLIE_J = 1e-6 * np.array(
    [
        [16.571, 0.830, 0.718],
        [0.830, 16.655, 1.800],
        [0.718, 1.800, 29.261],
    ]
)


class TiltClampWarning(RuntimeWarning):
    """Commanded acceleration needed more tilt (or less thrust) than allowed."""


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return w if np.ndim(a) else float(w)


@dataclass(frozen=True)
class QuadParams:
    m: float = 0.037
    g: float = -9.81
    dt: float = 0.01
    L: float = 0.033
    J: np.ndarray = field(default_factory=lambda: CRAZYFLIE_J.copy())

    def __post_init__(self):
        J = as_mat(self.J, "J")
        if self.m <= 0 or self.dt <= 0:
            raise ValueError("mass and time step must be positive")
        if J.shape != (3, 3) or not np.allclose(J, J.T) or np.linalg.eigvalsh(J)[0] <= 0:
            raise ValueError("J must be a symmetric positive definite 3x3 matrix")
        object.__setattr__(self, "J", J)


@dataclass(frozen=True)
class QuadState:
    r: np.ndarray
    v: np.ndarray
    att: np.ndarray  # roll, pitch, yaw
    Omega: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "r", as_vec(self.r, "r"))
        object.__setattr__(self, "v", as_vec(self.v, "v"))
        object.__setattr__(self, "att", wrap_angle(as_vec(self.att, "att")))
        object.__setattr__(self, "Omega", as_vec(self.Omega, "Omega"))
        for name in ("r", "v", "att", "Omega"):
            if getattr(self, name).shape != (3,):
                raise ValueError(f"{name} must have 3 components")

    @classmethod
    def at(cls, r, v=(0.0, 0.0, 0.0)) -> "QuadState":
        return cls(r, v, np.zeros(3), np.zeros(3))

    def pos_vel(self) -> np.ndarray:
        return np.concatenate([self.r, self.v])


def rotation_matrix(phi: float, theta: float, psi: float) -> np.ndarray:
    """Body-to-world rotation for roll ``phi``, pitch ``theta``, yaw ``psi`` (Z-X-Y order)."""
    cph, sph = math.cos(phi), math.sin(phi)
    cth, sth = math.cos(theta), math.sin(theta)
    cps, sps = math.cos(psi), math.sin(psi)
    return np.array(
        [
            [cps * cth - sph * sps * sth, -cph * sps, cps * sth + cth * sph * sps],
            [cth * sps + cps * sph * sth, cph * cps, sps * sth - cps * cth * sph],
            [-cph * sth, sph, cph * cth],
        ]
    )


def euler_rates(att, Omega) -> np.ndarray:
    """Euler angle rates from body angular velocity for the Z-X-Y convention."""
    phi, theta, _ = att
    cph, sph = math.cos(phi), math.sin(phi)
    cth, sth = math.cos(theta), math.sin(theta)
    # Omega = W @ [phi_dot, theta_dot, psi_dot]
    W = np.array(
        [
            [cth, 0.0, -cph * sth],
            [0.0, 1.0, sph],
            [sth, 0.0, cph * cth],
        ]
    )
    return np.linalg.solve(W, Omega)


def quad_step(s: QuadState, F: float, torque, p: QuadParams, d=None, w=None) -> QuadState:
    """One explicit-Euler step of the rigid-body model.

    ``d`` and ``w`` are per-step velocity increments (disturbance and process
    noise) added on top of the integrated acceleration.
    """
    torque = as_vec(torque, "torque")
    R = rotation_matrix(*s.att)
    acc = p.g * E3 + (F / p.m) * (R @ E3)
    dv = p.dt * acc
    if d is not None:
        dv = dv + as_vec(d, "d")
    if w is not None:
        dv = dv + as_vec(w, "w")
    J = p.J
    Omega_dot = np.linalg.solve(J, torque - np.cross(s.Omega, J @ s.Omega))
    att = s.att + p.dt * euler_rates(s.att, s.Omega)
    return QuadState(s.r + p.dt * s.v, s.v + dv, att, s.Omega + p.dt * Omega_dot)


@dataclass(frozen=True)
class ControlModel:
    """Discrete control-affine model ``x+ = f(x) + g(x) u`` with output ``c(x)``.

    ``n_pos`` position coordinates are followed by as many velocities.
    """

    n_pos: int
    dt: float
    drift: Callable[[np.ndarray], np.ndarray]
    input_map: Callable[[np.ndarray], np.ndarray]
    output_map: Callable[[np.ndarray], np.ndarray]
    drift_jacobian: Callable[[np.ndarray], np.ndarray] | None = None
    output_jacobian: Callable[[np.ndarray], np.ndarray] | None = None

    @property
    def n_state(self) -> int:
        return 2 * self.n_pos

    def vector_field(self, x) -> np.ndarray:
        """Continuous-time drift ``(f(x) - x) / dt``."""
        x = np.asarray(x, dtype=float)
        return (self.drift(x) - x) / self.dt

    def input_field(self, x) -> np.ndarray:
        """Continuous-time input map ``g(x) / dt``."""
        return self.input_map(np.asarray(x, dtype=float)) / self.dt

    def step(self, x, u) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.drift(x) + self.input_map(x) @ np.asarray(u, dtype=float)


def double_integrator_model(dt: float, n_pos: int = 3) -> ControlModel:
    if dt <= 0:
        raise ValueError("dt must be positive")
    I = np.eye(n_pos)
    Z = np.zeros((n_pos, n_pos))
    A = np.block([[I, dt * I], [Z, I]])
    G = np.vstack([Z, dt * I])
    return ControlModel(
        n_pos=n_pos,
        dt=dt,
        drift=lambda x: A @ x,
        input_map=lambda x: G.copy(),
        output_map=lambda x: np.array(x, dtype=float),
        drift_jacobian=lambda x: A.copy(),
        output_jacobian=lambda x: np.eye(2 * n_pos),
    )


def _central_jacobian(fn, x, eps):
    cols = []
    for j in range(x.size):
        e = np.zeros(x.size)
        e[j] = eps
        cols.append((fn(x + e) - fn(x - e)) / (2 * eps))
    return np.column_stack(cols)


def linearize(model: ControlModel, x, u, Q=None, R=None, eps: float = 1e-6) -> LinearizedSystem:
    """Jacobians of the drift and output map at ``x``; ``B`` is ``g(x)`` itself.

    Uses the model's analytic Jacobians when it has them, central differences
    otherwise. ``Q`` defaults to zero and ``R`` to the identity.
    """
    x = as_vec(x, "x")
    n = x.size
    A = model.drift_jacobian(x) if model.drift_jacobian else _central_jacobian(model.drift, x, eps)
    C = model.output_jacobian(x) if model.output_jacobian else _central_jacobian(model.output_map, x, eps)
    B = model.input_map(x)
    Q = np.zeros((n, n)) if Q is None else Q
    R = np.eye(C.shape[0]) if R is None else R
    return LinearizedSystem(A, B, C, Q, R)


def acceleration_to_attitude(a_cmd, psi_ref: float, p: QuadParams, warn: bool = True):
    """Invert a commanded acceleration into roll, pitch and thrust at yaw ``psi_ref``.

    Returns ``(phi, theta, T, clamped)``. The specific force ``a_cmd - g e3``
    sets the body-up direction. Tilt beyond 80 degrees is clamped by shrinking
    the horizontal part; a command that needs downward thrust yields zero
    thrust at level attitude.
    """
    a = as_vec(a_cmd, "a_cmd")
    f = a - p.g * E3
    clamped = False
    if f[2] <= 0.0:
        clamped = True
        if warn:
            warnings.warn("commanded acceleration needs downward thrust; using zero thrust", TiltClampWarning)
        return 0.0, 0.0, 0.0, clamped
    horiz = math.hypot(f[0], f[1])
    max_horiz = math.tan(MAX_TILT) * f[2]
    if horiz > max_horiz:
        clamped = True
        if warn:
            warnings.warn("commanded tilt exceeds 80 degrees; clamping", TiltClampWarning)
        f = np.array([f[0] * max_horiz / horiz, f[1] * max_horiz / horiz, f[2]])
    T = p.m * float(np.linalg.norm(f))
    n = f / np.linalg.norm(f)
    # undo the yaw so that n = (sin th, -cos th sin ph, cos ph cos th)
    c, s = math.cos(psi_ref), math.sin(psi_ref)
    nx = c * n[0] + s * n[1]
    ny = -s * n[0] + c * n[1]
    nz = n[2]
    phi = math.atan2(-ny, nz)
    theta = math.atan2(nx, math.hypot(ny, nz))
    return phi, theta, T, clamped


def realized_acceleration(phi: float, theta: float, psi: float, T: float, p: QuadParams) -> np.ndarray:
    return p.g * E3 + (T / p.m) * (rotation_matrix(phi, theta, psi) @ E3)


def hold_attitude(s: QuadState, phi: float, theta: float, psi: float) -> QuadState:
    """Return ``s`` with the attitude replaced and body rates zeroed (ideal inner loop)."""
    return replace(s, att=np.array([phi, theta, psi]), Omega=np.zeros(3))
