"""Minimum-intervention safety filter.

Solves ``min 1/2 |u - u_nominal|^2  s.t.  a_j . u <= b_j`` (plus optional box
bounds) with a dual active-set method (Goldfarb-Idnani with identity
Hessian). The iteration starts at the unconstrained minimiser and adds the
most violated constraint each round, so an interior nominal command is
returned untouched. Contradictory constraints are detected by the dual step
and answered with the least-infeasible point.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import linprog

from .barrier import SafetyConstraint
from .numkit import as_vec

log = logging.getLogger(__name__)

FEAS_TOL = 1e-10
MAX_ITER = 200


class QPStatus(str, Enum):
    NOMINAL_FEASIBLE = "nominal_feasible"
    PROJECTED = "projected"
    CLAMPED_INFEASIBLE = "clamped_infeasible"


@dataclass
class QPProblem:
    u_nominal: np.ndarray
    constraints: list = field(default_factory=list)
    u_min: np.ndarray | None = None
    u_max: np.ndarray | None = None

    def __post_init__(self):
        self.u_nominal = as_vec(self.u_nominal, "u_nominal")
        m = self.u_nominal.size
        for c in self.constraints:
            if np.asarray(c.a).shape != (m,):
                raise ValueError(f"constraint normal has shape {np.shape(c.a)}, expected ({m},)")
        if self.u_min is not None:
            self.u_min = as_vec(self.u_min, "u_min")
        if self.u_max is not None:
            self.u_max = as_vec(self.u_max, "u_max")
        if self.u_min is not None and self.u_max is not None and np.any(self.u_min > self.u_max):
            raise ValueError("u_min must not exceed u_max")

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """All rows as ``(A, b)``: CBF constraints first, then upper and lower bounds."""
        m = self.u_nominal.size
        rows = [np.asarray(c.a, dtype=float) for c in self.constraints]
        rhs = [float(c.b) for c in self.constraints]
        eye = np.eye(m)
        if self.u_max is not None:
            rows += list(eye)
            rhs += list(self.u_max)
        if self.u_min is not None:
            rows += list(-eye)
            rhs += list(-self.u_min)
        if not rows:
            return np.zeros((0, m)), np.zeros(0)
        return np.array(rows), np.array(rhs)


@dataclass
class QPSolution:
    u_safe: np.ndarray
    active_set: list
    status: QPStatus
    multipliers: np.ndarray
    max_violation: float = 0.0


class _Infeasible(Exception):
    pass


def _dual_active_set(u0: np.ndarray, A: np.ndarray, b: np.ndarray, tol: float = FEAS_TOL):
    """Goldfarb-Idnani iteration for an identity Hessian. Returns ``(u, active, lam)``."""
    u = u0.copy()
    active: list[int] = []
    lam: list[float] = []
    scale = np.maximum(1.0, np.linalg.norm(A, axis=1)) if A.size else np.ones(0)
    for _ in range(MAX_ITER):
        viol = (A @ u - b) / scale
        if active:
            viol[active] = -np.inf
        p = int(np.argmax(viol)) if viol.size else -1
        if p < 0 or viol[p] <= tol:
            return u, active, np.array(lam)
        lam_p = 0.0
        while True:
            n_p = A[p]
            if active:
                N = A[active].T
                r, *_ = np.linalg.lstsq(N, n_p, rcond=None)
                z = n_p - N @ r
            else:
                r = np.zeros(0)
                z = n_p.copy()
            s = float(A[p] @ u - b[p])
            if s <= tol * scale[p]:
                break
            z_norm = float(z @ z)
            full = s / z_norm if z_norm > 1e-14 * float(n_p @ n_p) else np.inf
            partial, drop = np.inf, -1
            for i, (ri, li) in enumerate(zip(r, lam)):
                if ri > 1e-14 and li / ri < partial:
                    partial, drop = li / ri, i
            if not np.isfinite(full) and drop < 0:
                raise _Infeasible
            t = min(full, partial)
            u = u - t * z
            lam = [li - t * ri for li, ri in zip(lam, r)]
            lam_p += t
            if full <= partial:
                active.append(p)
                lam.append(lam_p)
                break
            del active[drop]
            del lam[drop]
    raise RuntimeError("active-set iteration did not converge")


def _least_infeasible(u0, A, b):
    """Minimise the largest normalised violation, then project ``u0`` onto that relaxed set."""
    m = u0.size
    norms = np.maximum(np.linalg.norm(A, axis=1), 1e-300)
    An, bn = A / norms[:, None], b / norms
    # variables (u, t): minimise t subject to An u - t <= bn
    res = linprog(
        c=np.r_[np.zeros(m), 1.0],
        A_ub=np.hstack([An, -np.ones((A.shape[0], 1))]),
        b_ub=bn,
        bounds=[(None, None)] * (m + 1),
        method="highs",
    )
    if res.status != 0:
        raise RuntimeError(f"least-infeasible LP failed: {res.message}")
    t_star = float(res.x[-1])
    relax = t_star + 1e-9 * max(1.0, abs(t_star))
    u, active, lam = _dual_active_set(u0, An, bn + relax)
    return u, active, lam, t_star


def solve_qp(problem: QPProblem) -> QPSolution:
    u0 = problem.u_nominal
    A, b = problem.stacked()
    if A.shape[0] == 0 or np.all(A @ u0 - b <= FEAS_TOL * np.maximum(1.0, np.linalg.norm(A, axis=1))):
        return QPSolution(u0.copy(), [], QPStatus.NOMINAL_FEASIBLE, np.zeros(0))
    try:
        u, active, lam = _dual_active_set(u0, A, b)
    except _Infeasible:
        u, active, lam, t_star = _least_infeasible(u0, A, b)
        log.debug("safety QP infeasible; least violation %.3e", t_star)
        return QPSolution(u, sorted(active), QPStatus.CLAMPED_INFEASIBLE, lam, max_violation=t_star)
    order = np.argsort(active, kind="stable")
    return QPSolution(u, [active[i] for i in order], QPStatus.PROJECTED, lam[order])


def halfspace_projection(u_nominal, a, b) -> np.ndarray:
    """Closed-form projection onto ``{u : a . u <= b}``."""
    u = np.asarray(u_nominal, dtype=float)
    a = np.asarray(a, dtype=float)
    excess = float(a @ u - b)
    if excess <= 0.0:
        return u.copy()
    return u - (excess / float(a @ a)) * a


def brute_force_qp(problem: QPProblem, grid_step: float, lower, upper):
    """Grid-search minimiser over the box ``[lower, upper]``; ``None`` if no grid point is feasible.

    Test oracle only; intended for at most three control dimensions.
    """
    lower = as_vec(lower, "lower")
    upper = as_vec(upper, "upper")
    m = problem.u_nominal.size
    if m > 3 or lower.size != m or upper.size != m:
        raise ValueError("brute force supports up to 3 dimensions with a matching box")
    axes = [np.arange(lo, hi + 0.5 * grid_step, grid_step) for lo, hi in zip(lower, upper)]
    A, b = problem.stacked()
    best, best_cost = None, np.inf
    # chunk along the first axis to bound memory
    for x0 in np.array_split(axes[0], max(1, axes[0].size // 64)):
        mesh = np.stack(np.meshgrid(x0, *axes[1:], indexing="ij"), axis=-1).reshape(-1, m)
        ok = np.all(mesh @ A.T <= b + 1e-12, axis=1) if A.size else np.ones(len(mesh), bool)
        if not ok.any():
            continue
        cand = mesh[ok]
        cost = np.sum((cand - problem.u_nominal) ** 2, axis=1)
        i = int(np.argmin(cost))
        if cost[i] < best_cost:
            best, best_cost = cand[i].copy(), cost[i]
    return best


def constraint_slack(problem: QPProblem, u) -> float:
    """Smallest ``b - a . u`` over the CBF rows (``inf`` when there are none)."""
    if not problem.constraints:
        return float("inf")
    return min(c.slack(u) for c in problem.constraints)


__all__ = [
    "QPProblem",
    "QPSolution",
    "QPStatus",
    "SafetyConstraint",
    "brute_force_qp",
    "constraint_slack",
    "halfspace_projection",
    "solve_qp",
]
