import math
from dataclasses import replace

import numpy as np
import pytest

from recbf.dynamics import QuadState
from recbf.harness import (
    CONTROLLERS,
    RunMetrics,
    SimulationError,
    compute_metrics,
    csv_header,
    read_csv,
    read_summary,
    run_batch,
    run_closed_loop,
    write_csv,
    write_summary,
)
from recbf.scenarios import paper_scenario

SHORT = 0.5


def short(name, **kw):
    return replace(paper_scenario(name), duration=SHORT, **kw)


def metrics_from_rows(rows, cfg, seed):
    """Independent recomputation of RunMetrics from parsed CSV rows."""
    safe = cfg.safe_set()
    keep = [r for r in rows if r["t"] >= cfg.warmup - 1e-12]
    ax = ("x", "y", "z")
    h, alt, err, derr = [], [], [], []
    for r in keep:
        pos = np.array([r[f"x_true_r_{a}"] for a in ax])
        vel = np.array([r[f"x_true_v_{a}"] for a in ax])
        xh = np.array([r[f"x_hat_{p}_{a}"] for p in ("r", "v") for a in ax])
        h.append(float(np.min(safe.eval_h(np.r_[pos, vel]))))
        alt.append(pos[2])
        err.append(xh - np.r_[pos, vel])
        derr.append(np.array([r[f"d_hat_{a}"] - r[f"d_true_{a}"] for a in ax]))
    h, err, derr = np.array(h), np.array(err), np.array(derr)
    return RunMetrics(
        min_h=float(h.min()),
        violation_steps=int(np.count_nonzero(h < 0.0)),
        max_altitude=float(max(alt)),
        rms_state_error=float(np.sqrt(np.mean(np.sum(err**2, axis=1)))),
        rms_disturbance_error=float(np.sqrt(np.mean(np.sum(derr**2, axis=1)))),
        seed=seed,
    )


def test_hover_at_target_without_noise():
    cfg = replace(
        paper_scenario("sim_box"),
        x0=QuadState.at([1.0, 1.0, 1.0]),
        noise_scale=0.0,
        disturbance_amp=0.0,
        duration=5.0,
    )
    recs, _ = run_closed_loop(cfg, "nominal_only")
    drift = max(np.max(np.abs(r.x_true.r - [1.0, 1.0, 1.0])) for r in recs)
    assert drift < 1e-6


def test_unknown_controller():
    with pytest.raises(ValueError):
        run_closed_loop(short("sim_box"), "pid")


@pytest.mark.parametrize("controller", CONTROLLERS)
def test_records_shape_and_time(controller):
    cfg = short("sim_box")
    recs, m = run_closed_loop(cfg, controller)
    assert len(recs) == cfg.n_steps
    t = np.array([r.t for r in recs])
    assert np.allclose(np.diff(t), cfg.params.dt)
    assert (m.violation_steps == 0) == (m.min_h >= 0)
    statuses = {r.qp_status for r in recs}
    if controller == "nominal_only":
        assert statuses == {"skipped"}
    else:
        assert statuses <= {"nominal_feasible", "projected", "clamped_infeasible"}


def test_run_is_deterministic():
    a, ma = run_closed_loop(short("sim_ellipsoid", seed=4), "re_cbf")
    b, mb = run_closed_loop(short("sim_ellipsoid", seed=4), "re_cbf")
    assert ma == mb
    for x, y in zip(a, b):
        assert np.array_equal(x.x_hat, y.x_hat) and np.array_equal(x.u_safe, y.u_safe)


def test_filter_callback_sees_every_update():
    seen = []
    cfg = short("sim_box")
    run_closed_loop(cfg, "re_cbf", on_filter=lambda k, fs: seen.append(k))
    assert seen == list(range(1, cfg.n_steps))


def test_nominal_only_crosses_obstacle():
    _, m = run_closed_loop(paper_scenario("sim_ellipsoid"), "nominal_only")
    assert m.min_h < 0


def test_compute_metrics_warmup_window():
    recs, _ = run_closed_loop(short("sim_box"), "nominal_only")
    all_rows = compute_metrics(recs, 0, warmup=0.0)
    later = compute_metrics(recs, 0, warmup=0.3)
    assert later.min_h >= all_rows.min_h
    empty = compute_metrics([], 3)
    assert empty.min_h == math.inf and empty.violation_steps == 0


def test_simulation_error_on_non_finite(monkeypatch):
    import recbf.harness as hz

    real = hz.quad_step

    def bad_step(s, *a, **k):
        out = real(s, *a, **k)
        object.__setattr__(out, "v", np.array([np.inf, 0.0, 0.0]))
        return out

    monkeypatch.setattr(hz, "quad_step", bad_step)
    with pytest.raises(SimulationError) as info:
        run_closed_loop(short("sim_box"), "nominal_only")
    assert info.value.step == 0


def test_batch_order_cardinality_and_errors(monkeypatch):
    cfg = short("sim_box")
    seeds = [5, 1, 3]
    ms = run_batch(cfg, "nominal_only", seeds)
    assert [m.seed for m in ms] == seeds
    assert ms[0] == run_batch(cfg, "nominal_only", [5])[0]
    with pytest.raises(ValueError):
        run_batch(cfg, "nominal_only", [])

    import recbf.harness as hz

    real = hz.run_closed_loop

    def flaky(c, controller, **kw):
        if c.seed == 1:
            raise SimulationError("synthetic", 7)
        return real(c, controller, **kw)

    monkeypatch.setattr(hz, "run_closed_loop", flaky)
    ms = run_batch(cfg, "nominal_only", seeds)
    assert ms[1].error == "step 7: synthetic"
    assert not ms[0].error and not ms[2].error


def test_batch_parallel_matches_serial():
    cfg = short("sim_box")
    assert run_batch(cfg, "re_cbf", range(3), workers=2) == run_batch(cfg, "re_cbf", range(3))


# ---------------------------------------------------------------- CSV
def test_csv_header_only(tmp_path):
    p = tmp_path / "empty.csv"
    write_csv([], p)
    assert p.read_bytes() == (",".join(csv_header()) + "\n").encode()


def test_csv_one_record_two_lines(tmp_path):
    recs, _ = run_closed_loop(replace(paper_scenario("sim_box"), duration=0.01), "re_cbf")
    p = tmp_path / "one.csv"
    write_csv(recs, p)
    data = p.read_bytes()
    assert data.count(b"\n") == 2 and b"\r" not in data


def test_csv_header_follows_record_fields():
    h = csv_header()
    assert h[0] == "t" and h[1:4] == ["x_true_r_x", "x_true_r_y", "x_true_r_z"]
    assert h[-3:] == ["h_min", "qp_status", "constraint_slack"]
    assert len(h) == 1 + 12 + 6 + 12 + 3


def test_csv_round_trip_recomputes_metrics_exactly(tmp_path):
    cfg = short("sim_ellipsoid", seed=2)
    recs, m = run_closed_loop(cfg, "re_cbf")
    p = tmp_path / "run.csv"
    write_csv(recs, p)
    rows = read_csv(p)
    assert metrics_from_rows(rows, cfg, 2) == m
    assert [r["qp_status"] for r in rows] == [r.qp_status for r in recs]


def test_csv_write_error_names_path(tmp_path):
    target = tmp_path / "missing" / "x.csv"
    with pytest.raises(OSError) as info:
        write_csv([], target)
    assert str(target) in str(info.value)


def test_batch_mean_matches_csv_recomputation(tmp_path):
    cfg = short("sim_box")
    seeds = [0, 1, 2]
    ms = run_batch(cfg, "re_cbf", seeds)
    vals = []
    for s in seeds:
        recs, _ = run_closed_loop(replace(cfg, seed=s), "re_cbf")
        p = tmp_path / f"s{s}.csv"
        write_csv(recs, p)
        vals.append(metrics_from_rows(read_csv(p), cfg, s).rms_disturbance_error)
    assert np.mean([m.rms_disturbance_error for m in ms]) == pytest.approx(np.mean(vals), abs=1e-15)


def test_summary_round_trip(tmp_path):
    ms = run_batch(short("sim_box"), "nominal_only", [0, 1])
    p = tmp_path / "sum.csv"
    write_summary(ms, p)
    rows = read_summary(p)
    assert [int(r["seed"]) for r in rows] == [0, 1]
    assert float(rows[0]["min_h"]) == ms[0].min_h
