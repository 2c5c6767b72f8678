"""Figures for a closed-loop run or a batch summary, written next to the CSV output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .scenarios import ScenarioConfig  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 8,
    "font.size": 9,
}


def figure_paths(csv_path) -> dict:
    """Sibling PNG paths derived from the CSV stem."""
    p = Path(csv_path)
    stem = p.with_suffix("")
    return {
        "trajectory": Path(f"{stem}_trajectory.png"),
        "barrier": Path(f"{stem}_h.png"),
        "altitude": Path(f"{stem}_altitude.png"),
    }


def _arrays(records):
    t = np.array([r.t for r in records])
    r_true = np.array([r.x_true.r for r in records]).reshape(-1, 3)
    r_hat = np.array([r.x_hat[:3] for r in records]).reshape(-1, 3)
    h = np.array([r.h_min for r in records])
    return t, r_true, r_hat, h


def _draw_obstacle(ax, cfg: ScenarioConfig):
    if cfg.kind == "super_ellipsoid":
        o = cfg.obstacle
        th = np.linspace(0.0, 2.0 * np.pi, 400)
        # h = 0 contour in the plane z = 0, where the unsafe slice is widest
        k = o.d_s**0.25
        c, s = np.cos(th), np.sin(th)
        x = o.o_x + k * o.a * np.sign(c) * np.sqrt(np.abs(c))
        y = o.o_y + k * o.b * np.sign(s) * np.sqrt(np.abs(s))
        ax.fill(x, y, color="0.8", label="h < 0")
    else:
        b = cfg.box
        ax.plot([b.x_min, b.x_max, b.x_max, b.x_min, b.x_min], [b.y_min, b.y_min, b.y_max, b.y_max, b.y_min],
                "k--", lw=1, label="box")


def plot_run(records, cfg: ScenarioConfig, csv_path) -> dict:
    """Write trajectory, barrier value and altitude figures; return their paths."""
    paths = figure_paths(csv_path)
    if not records:
        return {}
    t, r_true, r_hat, h = _arrays(records)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        _draw_obstacle(ax, cfg)
        ax.plot(r_true[:, 0], r_true[:, 1], lw=1.2, label="true")
        ax.plot(r_hat[:, 0], r_hat[:, 1], lw=0.6, alpha=0.7, label="estimate")
        ax.plot(*cfg.target[:2], "r*", ms=9, label="target")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        ax.set_aspect("equal", adjustable="datalim")
        ax.legend()
        fig.tight_layout()
        fig.savefig(paths["trajectory"])
        plt.close(fig)

        fig, ax = plt.subplots()
        ax.plot(t, h, lw=1.0)
        ax.axhline(0.0, color="r", lw=0.8)
        ax.axvline(cfg.warmup, color="0.5", ls=":", lw=0.8, label="warm-up end")
        ax.set_xlabel("t [s]")
        ax.set_ylabel("min h")
        ax.legend()
        fig.tight_layout()
        fig.savefig(paths["barrier"])
        plt.close(fig)

        fig, ax = plt.subplots()
        ax.plot(t, r_true[:, 2], lw=1.0, label="true")
        ax.plot(t, r_hat[:, 2], lw=0.6, alpha=0.7, label="estimate")
        if cfg.kind == "virtual_box":
            ax.axhline(cfg.box.z_max, color="r", lw=0.8, label="z_max")
        ax.set_xlabel("t [s]")
        ax.set_ylabel("z [m]")
        ax.legend()
        fig.tight_layout()
        fig.savefig(paths["altitude"])
        plt.close(fig)
    return paths


def plot_summary(metrics, summary_path) -> Path:
    """Per-seed min h and max altitude for a batch."""
    out = Path(summary_path).with_suffix("")
    out = Path(f"{out}_metrics.png")
    ok = [m for m in metrics if not m.error]
    seeds = [m.seed for m in ok]
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(2, 1, sharex=True)
        a1.plot(seeds, [m.min_h for m in ok], "o", ms=3)
        a1.axhline(0.0, color="r", lw=0.8)
        a1.set_ylabel("min h")
        a2.plot(seeds, [m.max_altitude for m in ok], "o", ms=3)
        a2.set_ylabel("max z [m]")
        a2.set_xlabel("seed")
        fig.tight_layout()
        fig.savefig(out)
        plt.close(fig)
    return out
