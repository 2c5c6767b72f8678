"""Resilient state and disturbance estimation for linear time-varying systems.

One filter step jointly estimates the state and an additive unknown input
``d`` entering the dynamics::

    x[k+1] = A x[k] + B u[k] + d[k] + w[k]
    y[k]   = C x[k] + v[k]

The step runs in four stages: prediction, least-squares disturbance
estimation from the innovation, a time update that injects the disturbance
estimate, and a minimum-trace measurement update. With the disturbance stage
switched off the recursion collapses to a Kalman filter with a Joseph-form
covariance update (:func:`kalman_step`), which is how it is tested.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numkit import (
    PINV_RTOL,
    ShapeError,
    as_mat,
    as_vec,
    pseudo_inverse,
    symmetrize,
)

RANK_RTOL = 1e-12


class UnobservableDisturbanceError(ValueError):
    """C^T R~^-1 C is singular, so the disturbance cannot be recovered."""


class NumericalFailure(FloatingPointError):
    """A filter quantity became NaN or infinite."""

    def __init__(self, quantity: str):
        super().__init__(f"non-finite value in {quantity}")
        self.quantity = quantity


@dataclass(frozen=True)
class LinearizedSystem:
    """One step of a linear time-varying model.

    ``A``, ``B`` and ``Q`` describe the transition from step k-1 to k; ``C``
    and ``R`` the measurement taken at step k.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        A = as_mat(self.A, "A")
        B = as_mat(self.B, "B")
        C = as_mat(self.C, "C")
        Q = as_mat(self.Q, "Q")
        R = as_mat(self.R, "R")
        n = A.shape[0]
        p = C.shape[0]
        if A.shape != (n, n):
            raise ShapeError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise ShapeError(f"B has {B.shape[0]} rows, expected {n}")
        if C.shape[1] != n:
            raise ShapeError(f"C has {C.shape[1]} columns, expected {n}")
        if Q.shape != (n, n):
            raise ShapeError(f"Q must be {n}x{n}, got {Q.shape}")
        if R.shape != (p, p):
            raise ShapeError(f"R must be {p}x{p}, got {R.shape}")
        if not np.allclose(Q, Q.T, rtol=0.0, atol=1e-12) or np.linalg.eigvalsh(symmetrize(Q))[0] < -1e-12:
            raise ValueError("Q must be symmetric positive semidefinite")
        if not np.allclose(R, R.T, rtol=0.0, atol=1e-12) or np.linalg.eigvalsh(symmetrize(R))[0] <= 0.0:
            raise ValueError("R must be symmetric positive definite")
        for name, val in zip("ABCQR", (A, B, C, Q, R)):
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class FilterState:
    x_hat: np.ndarray
    P_x: np.ndarray
    d_hat: np.ndarray
    P_d: np.ndarray
    P_xd: np.ndarray

    @classmethod
    def initial(cls, x0, p0_scale: float = 10.0) -> "FilterState":
        """Prior centred on ``x0`` with covariance ``p0_scale * I`` and no disturbance."""
        x0 = as_vec(x0, "x0")
        n = x0.size
        z = np.zeros((n, n))
        return cls(x0, p0_scale * np.eye(n), np.zeros(n), z.copy(), z.copy())

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in (self.x_hat, self.P_x, self.d_hat, self.P_d, self.P_xd))


@dataclass(frozen=True)
class StepIntermediates:
    x_pred: np.ndarray
    P_x_pred: np.ndarray
    R_tilde: np.ndarray
    M: np.ndarray
    x_star: np.ndarray
    P_x_star: np.ndarray
    R_tilde_star: np.ndarray
    L: np.ndarray


def _check(name: str, a: np.ndarray) -> np.ndarray:
    if not np.isfinite(a).all():
        raise NumericalFailure(name)
    return a


def predict(fs: FilterState, sys: LinearizedSystem, u_prev) -> tuple[np.ndarray, np.ndarray]:
    """Propagate the estimate through the disturbance-free model."""
    u = as_vec(u_prev, "u_prev")
    if u.size != sys.m:
        raise ShapeError(f"u_prev has length {u.size}, expected {sys.m}")
    if fs.x_hat.size != sys.n:
        raise ShapeError(f"state estimate has length {fs.x_hat.size}, expected {sys.n}")
    x_pred = sys.A @ fs.x_hat + sys.B @ u
    P_pred = symmetrize(sys.A @ fs.P_x @ sys.A.T + sys.Q)
    return x_pred, P_pred


def estimate_disturbance(x_pred, P_x_pred, sys: LinearizedSystem, y):
    """Least-squares disturbance estimate from the predicted innovation.

    Returns ``(d_hat, P_d, M, R_tilde)``. Requires ``C`` to have full column
    rank; a rank-deficient ``C`` raises :class:`UnobservableDisturbanceError`.
    """
    y = as_vec(y, "y")
    if y.size != sys.p:
        raise ShapeError(f"y has length {y.size}, expected {sys.p}")
    C = sys.C
    R_tilde = symmetrize(C @ P_x_pred @ C.T + sys.R)
    R_tilde_inv = np.linalg.inv(R_tilde)
    info = symmetrize(C.T @ R_tilde_inv @ C)
    # symmetric PSD, so singular values are the absolute eigenvalues
    s = np.abs(np.linalg.eigvalsh(info))
    if s.size == 0 or s.min() <= RANK_RTOL * s.max():
        raise UnobservableDisturbanceError(
            "C^T R~^-1 C is singular; the disturbance needs a full-column-rank output map"
        )
    P_d = symmetrize(np.linalg.inv(info))
    M = P_d @ C.T @ R_tilde_inv
    d_hat = M @ (y - C @ x_pred)
    return _check("d_hat", d_hat), _check("P_d", P_d), _check("M", M), R_tilde


def time_update(x_pred, P_x_pred, d_hat, P_d, M, sys: LinearizedSystem, P_x_prev):
    """Inject the disturbance estimate and propagate the joint covariance.

    Returns ``(x_star, P_x_star, P_xd, R_tilde_star)``. ``P_x_pred`` is accepted
    for call-site symmetry only; the covariance is rebuilt from ``P_x_prev``.
    """
    A, C, Q, R = sys.A, sys.C, sys.Q, sys.R
    x_star = x_pred + d_hat
    P_xd = -P_x_prev @ A.T @ C.T @ M.T
    P_x_star = symmetrize(
        A @ P_x_prev @ A.T
        + A @ P_xd
        + P_xd.T @ A.T
        + P_d
        - M @ C @ Q
        - Q @ C.T @ M.T
        + Q
    )
    R_tilde_star = symmetrize(C @ P_x_star @ C.T + R - C @ M @ R - R @ M.T @ C.T)
    return _check("x_star", x_star), _check("P_x_star", P_x_star), _check("P_xd", P_xd), _check(
        "R_tilde_star", R_tilde_star
    )


def measurement_update(x_star, P_x_star, R_tilde_star, M, sys: LinearizedSystem, y):
    """Correct the intermediate estimate with the measurement.

    The gain uses the pseudo-inverse of ``R_tilde_star``, which is singular
    when the disturbance stage already absorbed the whole innovation (e.g.
    ``C = I``). Singular values are cut relative to the magnitude of the
    uncancelled terms ``C P* C^T + R``, not of ``R_tilde_star`` itself.
    Returns ``(x_hat, P_x, L)``.
    """
    y = as_vec(y, "y")
    C, R = sys.C, sys.R
    scale = float(np.abs(np.linalg.eigvalsh(symmetrize(C @ P_x_star @ C.T + R))).max())
    L = _check(
        "L", (P_x_star @ C.T - M @ R) @ pseudo_inverse(R_tilde_star, PINV_RTOL, atol=PINV_RTOL * scale)
    )
    x_hat = _check("x_hat", x_star + L @ (y - C @ x_star))
    I_LC = np.eye(sys.n) - L @ C
    P_x = symmetrize(
        I_LC @ M @ R @ L.T
        + L @ R @ M.T @ I_LC.T
        + I_LC @ P_x_star @ I_LC.T
        + L @ R @ L.T
    )
    return x_hat, _check("P_x", P_x), L


def re_step(fs: FilterState, sys: LinearizedSystem, u_prev, y, disturbance: bool = True):
    """Run one full resilient-estimation step.

    With ``disturbance=False`` the disturbance stage is bypassed (``M = 0``,
    ``d_hat = 0``, ``P_d = 0``) and the step reduces to a Kalman update.
    """
    x_pred, P_pred = predict(fs, sys, u_prev)
    n = sys.n
    if disturbance:
        d_hat, P_d, M, R_tilde = estimate_disturbance(x_pred, P_pred, sys, y)
    else:
        R_tilde = symmetrize(sys.C @ P_pred @ sys.C.T + sys.R)
        d_hat, P_d, M = np.zeros(n), np.zeros((n, n)), np.zeros((n, sys.p))
    x_star, P_star, P_xd, R_star = time_update(x_pred, P_pred, d_hat, P_d, M, sys, fs.P_x)
    x_hat, P_x, L = measurement_update(x_star, P_star, R_star, M, sys, y)
    new = FilterState(x_hat, P_x, d_hat, P_d, P_xd)
    inter = StepIntermediates(x_pred, P_pred, R_tilde, M, x_star, P_star, R_star, L)
    return new, inter


def kalman_step(fs: FilterState, sys: LinearizedSystem, u_prev, y) -> FilterState:
    """Textbook Kalman predict/update with Joseph-form covariance."""
    u = as_vec(u_prev, "u_prev")
    y = as_vec(y, "y")
    A, B, C, Q, R = sys.A, sys.B, sys.C, sys.Q, sys.R
    x_pred = A @ fs.x_hat + B @ u
    P_pred = symmetrize(A @ fs.P_x @ A.T + Q)
    S = C @ P_pred @ C.T + R
    K = np.linalg.solve(S.T, (P_pred @ C.T).T).T
    x_hat = x_pred + K @ (y - C @ x_pred)
    I_KC = np.eye(sys.n) - K @ C
    P = symmetrize(I_KC @ P_pred @ I_KC.T + K @ R @ K.T)
    n = sys.n
    return FilterState(_check("x_hat", x_hat), _check("P_x", P), np.zeros(n), np.zeros((n, n)), np.zeros((n, n)))
