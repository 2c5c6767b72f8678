"""Safe sets, reciprocal barriers and the stochastic exponential CBF constraint.

A safe set is ``{x : h(x) >= 0}`` with ``h`` depending on position only. The
reciprocal barrier is ``H = 1 / h`` (clamped at ``epsilon_floor``). For
higher relative degree a chain of functions is built::

    H_0     = H
    H_{i+1} = dH_i/dx . f + 1/2 Tr(sigma^T d2H_i/dx2 sigma) + dH_i/dx . d_hat + H_i

and the constraint on the control is imposed on ``H_r``::

    L_f H_r + L_g H_r u + 1/2 Tr(sigma^T d2H_r/dx2 sigma) + dH_r/dx . d_hat <= gamma / H_r

Derivatives are closed forms for a double integrator (state = position then
velocity, drift ``(v, 0)``, input on the velocity). Process noise must act
on the velocity channels only; the disturbance estimate may have any
components.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import ControlModel
from .numkit import as_mat, as_vec

EPSILON_FLOOR = 1e-6


class SafeSet:
    """Position-dependent safe-set function with ``output_dim`` components."""

    n_pos = 3
    output_dim = 1

    def position_derivatives(self, r: np.ndarray):
        """Return ``(h, dh, d2h, d3h)`` with shapes (k,), (k,p), (k,p,p), (k,p,p,p)."""
        raise NotImplementedError

    def eval_h(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.position_derivatives(x[: self.n_pos])[0]

    def grad_hess_h(self, x):
        """Gradient (k, n) and Hessian (k, n, n) of every component w.r.t. the full state."""
        x = np.asarray(x, dtype=float)
        p = self.n_pos
        _, dh, d2h, _ = self.position_derivatives(x[:p])
        k, n = dh.shape[0], x.size
        grad = np.zeros((k, n))
        hess = np.zeros((k, n, n))
        grad[:, :p] = dh
        hess[:, :p, :p] = d2h
        return grad, hess


@dataclass(frozen=True)
class SuperEllipsoid(SafeSet):
    """Outside of a quartic super-ellipsoid obstacle inflated by ``d_s``.

    ``h(r) = ((r_x-o_x)/a)^4 + ((r_y-o_y)/b)^4 + (r_z/c)^4 - d_s``; the obstacle
    is centred at ``z = 0``.
    """

    a: float
    b: float
    c: float
    o_x: float
    o_y: float
    d_s: float = 0.0

    def __post_init__(self):
        if min(self.a, self.b, self.c) <= 0:
            raise ValueError("half-lengths must be positive")
        if self.d_s < 0:
            raise ValueError("safety margin must be non-negative")

    def position_derivatives(self, r):
        scale = np.array([self.a, self.b, self.c])
        e = (np.asarray(r, dtype=float) - np.array([self.o_x, self.o_y, 0.0])) / scale
        h = np.array([np.sum(e**4) - self.d_s])
        dh = (4.0 * e**3 / scale)[None, :]
        d2h = np.diag(12.0 * e**2 / scale**2)[None, :, :]
        d3h = np.zeros((1, 3, 3, 3))
        idx = np.arange(3)
        d3h[0, idx, idx, idx] = 24.0 * e / scale**3
        return h, dh, d2h, d3h

    def center(self) -> np.ndarray:
        return np.array([self.o_x, self.o_y, 0.0])


@dataclass(frozen=True)
class AffineSet(SafeSet):
    """Intersection of halfspaces ``normals @ r + offsets >= 0``."""

    normals: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        nrm = as_mat(self.normals, "normals")
        off = as_vec(self.offsets, "offsets")
        if off.size != nrm.shape[0]:
            raise ValueError("one offset per normal is required")
        object.__setattr__(self, "normals", nrm)
        object.__setattr__(self, "offsets", off)

    @property
    def n_pos(self) -> int:  # type: ignore[override]
        return self.normals.shape[1]

    @property
    def output_dim(self) -> int:  # type: ignore[override]
        return self.normals.shape[0]

    def position_derivatives(self, r):
        k, p = self.normals.shape
        h = self.normals @ np.asarray(r, dtype=float) + self.offsets
        return h, self.normals.copy(), np.zeros((k, p, p)), np.zeros((k, p, p, p))


def box(x_min, x_max, y_min, y_max, z_min, z_max) -> AffineSet:
    """Axis-aligned box as six affine components ordered (max - r, r - min) per axis."""
    lo = np.array([x_min, y_min, z_min], dtype=float)
    hi = np.array([x_max, y_max, z_max], dtype=float)
    if np.any(lo >= hi):
        raise ValueError("box needs min < max on every axis")
    normals = []
    offsets = []
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1.0
        normals += [-e, e]
        offsets += [hi[i], -lo[i]]
    return AffineSet(np.array(normals), np.array(offsets))


@dataclass(frozen=True)
class ReciprocalBarrier:
    base: SafeSet
    alpha3_gain: float = 1.0
    epsilon_floor: float = EPSILON_FLOOR

    def __post_init__(self):
        if self.alpha3_gain <= 0 or self.epsilon_floor <= 0:
            raise ValueError("alpha3_gain and epsilon_floor must be positive")

    def H(self, x) -> np.ndarray:
        return 1.0 / np.maximum(self.base.eval_h(x), self.epsilon_floor)

    def alpha3(self, s):
        return self.alpha3_gain * s


@dataclass(frozen=True)
class ExpChain:
    barrier: ReciprocalBarrier
    relative_degree: int = 2
    sigma_w: np.ndarray | None = None

    def __post_init__(self):
        if self.relative_degree not in (1, 2):
            raise ValueError("closed-form chain supports relative degree 1 or 2")


@dataclass(frozen=True)
class SafetyConstraint:
    """Halfspace ``a @ u <= b`` on the control input."""

    a: np.ndarray
    b: float
    near_boundary: bool = False
    h: float = float("nan")
    H_r: float = float("nan")

    def slack(self, u) -> float:
        return float(self.b - self.a @ np.asarray(u, dtype=float))


@dataclass
class _Level:
    value: float
    grad_r: np.ndarray
    grad_v: np.ndarray
    hess_vv: np.ndarray


def _reciprocal_derivatives(h, dh, d2h, d3h, w):
    """Derivatives of 1/h up to second order, and the third contracted twice with ``w``."""
    phi = 1.0 / h
    phi1 = -dh / h**2
    phi2 = 2.0 * np.outer(dh, dh) / h**3 - d2h / h**2
    # third derivative of 1/h (Faa di Bruno) applied to (w, w)
    gw = dh @ w
    hw = d2h @ w
    phi3_ww = -6.0 * gw**2 * dh / h**4 + 2.0 * (2.0 * gw * hw + (w @ hw) * dh) / h**3 - (d3h @ w) @ w / h**2
    return phi, phi1, phi2, phi3_ww


def _check_model(model: ControlModel, x: np.ndarray):
    p = model.n_pos
    if x.size != 2 * p:
        raise ValueError(f"state has length {x.size}, model expects {2 * p}")
    f = model.vector_field(x)
    G = model.input_field(x)
    expected_G = np.vstack([np.zeros((p, p)), np.eye(p)])
    off = max(np.abs(f[:p] - x[p:]).max(), np.abs(f[p:]).max(), np.abs(G - expected_G).max())
    if not off <= 1e-9:
        raise ValueError("closed-form chain requires a double-integrator control model")


def _velocity_sigma(sigma, n: int, p: int) -> np.ndarray:
    if sigma is None:
        return np.zeros((p, 1))
    s = as_mat(sigma, "sigma_w")
    if s.shape[0] != n:
        raise ValueError(f"sigma_w must have {n} rows, got {s.shape[0]}")
    if np.any(s[:p] != 0.0):
        raise ValueError("closed-form chain supports noise on velocity channels only")
    return s[p:]


def _component_levels(derivs, eps, v, d_r, d_v, r_deg):
    """Levels H_0..H_r for one component, plus the clamp flag."""
    h, dh, d2h, d3h = derivs
    clamped = h <= eps
    p = v.size
    zero = np.zeros(p)
    zz = np.zeros((p, p))
    w = v + d_r
    phi, phi1, phi2, phi3_ww = _reciprocal_derivatives(max(h, eps), dh, d2h, d3h, w)
    levels = [_Level(phi, phi1, zero, zz)]
    # H_1 is linear in v, so its velocity Hessian vanishes and the trace term
    # on the velocity block is zero at this level.
    levels.append(_Level(phi1 @ w + phi, phi2 @ w + phi1, phi1.copy(), zz))
    if r_deg >= 2:
        levels.append(
            _Level(
                w @ phi2 @ w + 2.0 * phi1 @ w + phi1 @ d_v + phi,
                phi3_ww + 2.0 * phi2 @ w + phi2 @ d_v + phi1,
                2.0 * phi2 @ w + 2.0 * phi1,
                2.0 * phi2,
            )
        )
    return levels, clamped


def _levels(chain: ExpChain, x, d_hat, model: ControlModel):
    x = as_vec(x, "x")
    d = as_vec(d_hat, "d_hat")
    _check_model(model, x)
    p = model.n_pos
    if d.size != x.size:
        raise ValueError("d_hat must match the state dimension")
    base = chain.barrier.base
    h, dh, d2h, d3h = base.position_derivatives(x[:p])
    v, d_r, d_v = x[p:], d[:p], d[p:]
    out = []
    for j in range(h.size):
        out.append(
            _component_levels((h[j], dh[j], d2h[j], d3h[j]), chain.barrier.epsilon_floor, v, d_r, d_v,
                              chain.relative_degree)
        )
    return out, h


def chain_values(chain: ExpChain, x, d_hat, model: ControlModel) -> np.ndarray:
    """Values ``H_0..H_r`` per component, shape ``(output_dim, r + 1)``."""
    comps, _ = _levels(chain, x, d_hat, model)
    r = chain.relative_degree
    return np.array([[lv.value for lv in levels[: r + 1]] for levels, _ in comps])


def chain_gradients(chain: ExpChain, x, d_hat, model: ControlModel) -> np.ndarray:
    """Gradients of ``H_0..H_r`` w.r.t. the state with ``d_hat`` held fixed, shape ``(k, r+1, n)``."""
    comps, _ = _levels(chain, x, d_hat, model)
    r = chain.relative_degree
    return np.array(
        [[np.concatenate([lv.grad_r, lv.grad_v]) for lv in levels[: r + 1]] for levels, _ in comps]
    )


def trace_term(sigma, hess) -> float:
    """``1/2 Tr(sigma^T hess sigma)``."""
    sigma = np.asarray(sigma, dtype=float)
    return 0.5 * float(np.trace(sigma.T @ hess @ sigma))


def assemble_constraint(chain: ExpChain, x_hat, d_hat, model: ControlModel) -> list[SafetyConstraint]:
    """One ``a @ u <= b`` row per safe-set component, built on ``H_r``.

    ``near_boundary`` is set when ``h`` fell to ``epsilon_floor``; the row is
    still finite, evaluated at the clamped value.
    """
    x_hat = as_vec(x_hat, "x_hat")
    comps, h = _levels(chain, x_hat, d_hat, model)
    p = model.n_pos
    d = as_vec(d_hat, "d_hat")
    v = x_hat[p:]
    sig_v = _velocity_sigma(chain.sigma_w, x_hat.size, p)
    bar = chain.barrier
    rows = []
    for j, (levels, clamped) in enumerate(comps):
        top = levels[chain.relative_degree]
        lf = float(top.grad_r @ v)
        ito = trace_term(sig_v, top.hess_vv)
        dist = float(top.grad_r @ d[:p] + top.grad_v @ d[p:])
        H_r = top.value
        rhs = bar.alpha3(1.0 / max(H_r, bar.epsilon_floor))
        rows.append(
            SafetyConstraint(
                a=top.grad_v.copy(),
                b=float(rhs - lf - ito - dist),
                near_boundary=bool(clamped),
                h=float(h[j]),
                H_r=float(H_r),
            )
        )
    return rows
