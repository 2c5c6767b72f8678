"""Closed-loop simulation, Monte Carlo batches, metrics and CSV persistence.

Each tick: measure the full position/velocity state with noise, run the
resilient estimator, compute the PD command from the estimate, filter it
through the CBF quadratic program, recover attitude and thrust, and advance
the quadrotor with the sinusoidal disturbance and process noise.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .barrier import ExpChain, ReciprocalBarrier, assemble_constraint
from .dynamics import (
    QuadState,
    TiltClampWarning,
    acceleration_to_attitude,
    double_integrator_model,
    hold_attitude,
    quad_step,
    realized_acceleration,
)
from .estimator import FilterState, LinearizedSystem, re_step
from .numkit import make_rng, sample_gaussian
from .safety_filter import QPProblem, QPStatus, constraint_slack, solve_qp
from .scenarios import ScenarioConfig, disturbance_at, nominal_pd

log = logging.getLogger(__name__)

CONTROLLERS = ("nominal_only", "re_cbf", "true_state_cbf")
SKIPPED = "skipped"


class SimulationError(RuntimeError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class SimRecord:
    t: float
    x_true: QuadState
    x_hat: np.ndarray
    d_true: np.ndarray
    d_hat: np.ndarray
    u_nominal: np.ndarray
    u_safe: np.ndarray
    h_min: float
    qp_status: str
    constraint_slack: float


@dataclass(frozen=True)
class RunMetrics:
    min_h: float
    violation_steps: int
    max_altitude: float
    rms_state_error: float
    rms_disturbance_error: float
    seed: int
    error: str = ""


def _cbf_inputs(cfg: ScenarioConfig):
    """Chain, model and per-step noise levels shared by every tick of a run."""
    p = cfg.params
    model = double_integrator_model(p.dt)
    s = cfg.noise_scale
    # per-step noise on the velocity increments
    sigma_w = np.zeros((6, 6))
    sigma_w[3:, 3:] = s * np.eye(3)
    chain = ExpChain(ReciprocalBarrier(cfg.safe_set(), alpha3_gain=cfg.gamma), 2, sigma_w)
    return model, chain


def _estimator_system(cfg: ScenarioConfig, model) -> LinearizedSystem:
    s2 = cfg.noise_scale**2
    x = np.zeros(6)
    Q = np.zeros((6, 6))
    Q[3:, 3:] = s2 * np.eye(3)
    # R must stay positive definite when noise is switched off
    R = max(s2, 1e-10) * np.eye(6)
    return LinearizedSystem(model.drift_jacobian(x), model.input_map(x), model.output_jacobian(x), Q, R)


def run_closed_loop(cfg: ScenarioConfig, controller: str, init_filter_at_truth: bool = True, on_filter=None):
    """Simulate one run. Returns ``(records, metrics)``.

    ``on_filter(k, filter_state)`` is called after every estimator update.

    Raises :class:`SimulationError` when the truth state stops being finite.
    """
    if controller not in CONTROLLERS:
        raise ValueError(f"unknown controller {controller!r}; choose from {', '.join(CONTROLLERS)}")
    p = cfg.params
    dt = p.dt
    model, chain = _cbf_inputs(cfg)
    sys = _estimator_system(cfg, model)
    safe = cfg.safe_set()
    sched = cfg.schedule()
    rng = make_rng(cfg.seed)
    s = cfg.noise_scale
    meas_sqrt = s * np.eye(6)
    proc_sqrt = s * np.eye(3)
    u_lo, u_hi = cfg.input_bounds()

    truth = cfg.x0
    x0_est = truth.pos_vel() if init_filter_at_truth else np.zeros(6)
    fs = FilterState.initial(x0_est, cfg.p0_scale)
    u_prev = np.zeros(3)
    d_prev = np.zeros(3)
    records: list[SimRecord] = []

    for k in range(cfg.n_steps):
        t = k * dt
        x_true = truth.pos_vel()
        y = sample_gaussian(x_true, meas_sqrt, rng)
        if k > 0:
            fs, _ = re_step(fs, sys, u_prev, y)
            if on_filter is not None:
                on_filter(k, fs)
        x_hat = fs.x_hat
        d_hat_v = fs.d_hat[3:].copy()

        if controller == "true_state_cbf":
            x_ctrl, d_ctrl = x_true, np.zeros(6)
        else:
            # only the velocity channels carry a physical disturbance
            x_ctrl, d_ctrl = x_hat, np.concatenate([np.zeros(3), d_hat_v])
        u_n = nominal_pd(x_ctrl, cfg.target, cfg.pd_gains)
        cons = assemble_constraint(chain, x_ctrl, d_ctrl, model)
        problem = QPProblem(u_n, cons, u_lo, u_hi)
        if controller == "nominal_only":
            u_s, status = u_n, SKIPPED
        else:
            sol = solve_qp(problem)
            u_s, status = sol.u_safe, sol.status.value
        slack = constraint_slack(problem, u_s)

        records.append(
            SimRecord(
                t=t,
                x_true=truth,
                x_hat=x_hat.copy(),
                d_true=d_prev.copy(),
                d_hat=d_hat_v,
                u_nominal=u_n.copy(),
                u_safe=np.array(u_s, dtype=float),
                h_min=float(np.min(safe.eval_h(x_true))),
                qp_status=status,
                constraint_slack=slack,
            )
        )

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TiltClampWarning)
            phi, theta, T, _ = acceleration_to_attitude(u_s, 0.0, p)
        d_k = disturbance_at(sched, t)
        w_k = sample_gaussian(np.zeros(3), proc_sqrt, rng)
        truth = quad_step(hold_attitude(truth, phi, theta, 0.0), T, np.zeros(3), p, d_k, w_k)
        if not (np.isfinite(truth.r).all() and np.isfinite(truth.v).all()):
            raise SimulationError("truth state became non-finite", k)
        u_prev = realized_acceleration(phi, theta, 0.0, T, p)
        d_prev = d_k

    return records, compute_metrics(records, cfg.seed, cfg.warmup)


def compute_metrics(records, seed: int, warmup: float = 0.0) -> RunMetrics:
    """Metrics over the records with ``t >= warmup``."""
    rows = [r for r in records if r.t >= warmup - 1e-12]
    if not rows:
        return RunMetrics(math.inf, 0, -math.inf, 0.0, 0.0, seed)
    h = np.array([r.h_min for r in rows])
    alt = np.array([r.x_true.r[2] for r in rows])
    err = np.array([r.x_hat - r.x_true.pos_vel() for r in rows])
    derr = np.array([r.d_hat - r.d_true for r in rows])
    return RunMetrics(
        min_h=float(h.min()),
        violation_steps=int(np.count_nonzero(h < 0.0)),
        max_altitude=float(alt.max()),
        rms_state_error=float(np.sqrt(np.mean(np.sum(err**2, axis=1)))),
        rms_disturbance_error=float(np.sqrt(np.mean(np.sum(derr**2, axis=1)))),
        seed=seed,
    )


def _run_seed(args):
    cfg, controller, seed = args
    from dataclasses import replace

    try:
        _, metrics = run_closed_loop(replace(cfg, seed=seed), controller)
        return metrics
    except (SimulationError, ArithmeticError, ValueError) as exc:
        return RunMetrics(math.nan, -1, math.nan, math.nan, math.nan, seed, error=str(exc))


def run_batch(cfg: ScenarioConfig, controller: str, seeds, workers: int = 1) -> list[RunMetrics]:
    """One run per seed; results come back in seed order. Failed runs carry ``error``."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("run_batch needs at least one seed")
    jobs = [(cfg, controller, s) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_seed, jobs))
    return [_run_seed(j) for j in jobs]


# ---------------------------------------------------------------- CSV
_VEC3 = ("x", "y", "z")


def csv_header() -> list[str]:
    cols = ["t"]
    for part in ("r", "v", "att", "Omega"):
        cols += [f"x_true_{part}_{a}" for a in _VEC3]
    for part in ("r", "v"):
        cols += [f"x_hat_{part}_{a}" for a in _VEC3]
    for name in ("d_true", "d_hat", "u_nominal", "u_safe"):
        cols += [f"{name}_{a}" for a in _VEC3]
    cols += ["h_min", "qp_status", "constraint_slack"]
    return cols


def _fmt(x: float) -> str:
    return repr(float(x))


def _record_row(r: SimRecord) -> list[str]:
    xt = r.x_true
    nums = [r.t, *xt.r, *xt.v, *xt.att, *xt.Omega, *r.x_hat, *r.d_true, *r.d_hat, *r.u_nominal, *r.u_safe, r.h_min]
    return [_fmt(v) for v in nums] + [r.qp_status, _fmt(r.constraint_slack)]


def write_csv(records, path) -> None:
    """Write one header row and one row per record; floats keep full precision."""
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(csv_header())
            for r in records:
                w.writerow(_record_row(r))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def read_csv(path) -> list[dict]:
    """Parse a trajectory CSV back into dicts of floats (``qp_status`` stays a string)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = []
        for row in csv.DictReader(fh):
            rows.append({k: (v if k == "qp_status" else float(v)) for k, v in row.items()})
    return rows


def metrics_header() -> list[str]:
    return [f.name for f in fields(RunMetrics)]


def write_summary(metrics, path) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(metrics_header())
            for m in metrics:
                d = asdict(m)
                w.writerow([d[k] if isinstance(d[k], (str, int)) else _fmt(d[k]) for k in metrics_header()])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def read_summary(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
