"""Scenario definitions: nominal PD controller, safe sets, disturbance schedule."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .barrier import SafeSet, SuperEllipsoid, box
from .dynamics import QuadParams, QuadState

SCENARIO_NAMES = ("sim_ellipsoid", "sim_box", "arena_ellipsoid")
AXES = ("x", "y", "z")
NOMINAL_SATURATION = 5.0


class UnknownScenarioError(KeyError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self) -> str:
        return f"unknown scenario {self.name!r}; valid names: {', '.join(SCENARIO_NAMES)}"


class ConfigError(ValueError):
    """Malformed scenario configuration document."""


@dataclass(frozen=True)
class DisturbanceSchedule:
    amp: float = 0.05
    freq: float = 1.0
    axes: tuple = AXES


def disturbance_at(sched: DisturbanceSchedule, t: float) -> np.ndarray:
    """Per-step velocity disturbance ``amp * sin(2 pi freq t)`` on the selected axes."""
    d = np.zeros(3)
    val = sched.amp * math.sin(2.0 * math.pi * sched.freq * t)
    for ax in sched.axes:
        d[AXES.index(ax)] = val
    return d


@dataclass(frozen=True)
class PDGains:
    kp: tuple = (2.0, 2.0, 2.0)
    kd: tuple = (2.5, 2.5, 2.5)
    saturation: float = NOMINAL_SATURATION


def nominal_pd(x_hat, target, gains: PDGains) -> np.ndarray:
    """PD acceleration toward ``target``, clipped per axis to the saturation level."""
    x_hat = np.asarray(x_hat, dtype=float)
    u = np.asarray(gains.kp) * (np.asarray(target, dtype=float) - x_hat[:3]) - np.asarray(gains.kd) * x_hat[3:6]
    return np.clip(u, -gains.saturation, gains.saturation)


@dataclass(frozen=True)
class Obstacle:
    a: float
    b: float
    c: float
    o_x: float
    o_y: float
    d_s: float = 0.0


@dataclass(frozen=True)
class BoxBounds:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    z_min: float
    z_max: float


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str
    obstacle: Obstacle | None
    box: BoxBounds | None
    x0: QuadState
    target: np.ndarray
    duration: float
    noise_scale: float = 0.05
    disturbance_amp: float = 0.05
    disturbance_freq: float = 1.0
    seed: int = 0
    gamma: float = 1.0
    pd_gains: PDGains = field(default_factory=PDGains)
    name: str = "custom"
    params: QuadParams = field(default_factory=QuadParams)
    warmup: float = 0.2
    disturbance_axes: tuple = AXES
    p0_scale: float = 10.0
    accel_limit: float | None = None

    def __post_init__(self):
        validate_config(self)

    def safe_set(self) -> SafeSet:
        if self.kind == "super_ellipsoid":
            o = self.obstacle
            return SuperEllipsoid(o.a, o.b, o.c, o.o_x, o.o_y, o.d_s)
        bx = self.box
        return box(bx.x_min, bx.x_max, bx.y_min, bx.y_max, bx.z_min, bx.z_max)

    def schedule(self) -> DisturbanceSchedule:
        return DisturbanceSchedule(self.disturbance_amp, self.disturbance_freq, tuple(self.disturbance_axes))

    def input_bounds(self):
        """Acceleration box for the safety QP, ``(None, None)`` when unbounded.

        The floor on ``u_z`` is free fall, the most a thrust-only vehicle can descend.
        """
        if self.accel_limit is None:
            return None, None
        lim = self.accel_limit
        return np.array([-lim, -lim, self.params.g]), np.array([lim, lim, lim])

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.params.dt))


def validate_config(cfg: ScenarioConfig) -> None:
    if cfg.kind not in ("super_ellipsoid", "virtual_box"):
        raise ConfigError(f"kind must be super_ellipsoid or virtual_box, got {cfg.kind!r}")
    if cfg.kind == "super_ellipsoid":
        o = cfg.obstacle
        if o is None:
            raise ConfigError("super_ellipsoid scenario needs an obstacle")
        if min(o.a, o.b, o.c) <= 0 or o.d_s < 0:
            raise ConfigError("obstacle needs positive half-lengths and non-negative d_s")
    else:
        bx = cfg.box
        if bx is None:
            raise ConfigError("virtual_box scenario needs box bounds")
        if not (bx.x_min < bx.x_max and bx.y_min < bx.y_max and bx.z_min < bx.z_max):
            raise ConfigError("box needs min < max on every axis")
    if not cfg.duration > 0:
        raise ConfigError("duration must be positive")
    if cfg.noise_scale < 0 or cfg.disturbance_amp < 0 or cfg.gamma <= 0:
        raise ConfigError("noise_scale and disturbance_amp must be >= 0 and gamma > 0")
    if cfg.accel_limit is not None and not cfg.accel_limit > abs(cfg.params.g):
        raise ConfigError("accel_limit must exceed |g| so that hover is admissible")
    if len(cfg.target) != 3:
        raise ConfigError("target must have three components")
    if any(ax not in AXES for ax in cfg.disturbance_axes):
        raise ConfigError(f"disturbance axes must be drawn from {AXES}")


def paper_scenario(name: str) -> ScenarioConfig:
    """Built-in scenario with Crazyflie parameters and the sinusoidal disturbance."""
    if name == "sim_ellipsoid":
        return ScenarioConfig(
            kind="super_ellipsoid",
            obstacle=Obstacle(1.0, 1.0, 2.0, 3.0, 2.0, 0.2),
            box=None,
            x0=QuadState.at([0.0, 0.0, 10.0]),
            target=np.array([3.5, 2.5, -6.0]),
            duration=10.0,
            name=name,
        )
    if name == "sim_box":
        return ScenarioConfig(
            kind="virtual_box",
            obstacle=None,
            box=BoxBounds(-2.0, 2.0, -2.0, 2.0, -2.0, 2.0),
            x0=QuadState.at([-1.5, -1.5, 1.8], [0.0, 0.0, 1.8]),
            target=np.array([1.0, 1.0, 1.0]),
            duration=5.0,
            name=name,
        )
    if name == "arena_ellipsoid":
        return ScenarioConfig(
            kind="super_ellipsoid",
            obstacle=Obstacle(0.5, 0.5, 2.0, 0.25, 0.25, 0.2),
            box=None,
            x0=QuadState.at([-1.0, -1.0, 1.0]),
            target=np.array([1.5, 1.5, 1.0]),
            duration=10.0,
            name=name,
            accel_limit=20.0,
        )
    raise UnknownScenarioError(name)


# ---------------------------------------------------------------- JSON
_TOP_FIELDS = (
    "kind", "obstacle", "box", "x0", "target", "duration", "noise_scale", "disturbance_amp",
    "disturbance_freq", "seed", "gamma", "pd_gains",
)
_OPTIONAL_FIELDS = ("name", "warmup", "disturbance_axes", "p0_scale", "accel_limit")


def config_to_dict(cfg: ScenarioConfig) -> dict:
    x0 = cfg.x0
    return {
        "kind": cfg.kind,
        "obstacle": asdict(cfg.obstacle) if cfg.obstacle else None,
        "box": asdict(cfg.box) if cfg.box else None,
        "x0": {"r": x0.r.tolist(), "v": x0.v.tolist(), "att": x0.att.tolist(), "Omega": x0.Omega.tolist()},
        "target": [float(t) for t in cfg.target],
        "duration": cfg.duration,
        "noise_scale": cfg.noise_scale,
        "disturbance_amp": cfg.disturbance_amp,
        "disturbance_freq": cfg.disturbance_freq,
        "seed": cfg.seed,
        "gamma": cfg.gamma,
        "pd_gains": {"kp": list(cfg.pd_gains.kp), "kd": list(cfg.pd_gains.kd), "saturation": cfg.pd_gains.saturation},
        "name": cfg.name,
        "warmup": cfg.warmup,
        "disturbance_axes": list(cfg.disturbance_axes),
        "p0_scale": cfg.p0_scale,
        "accel_limit": cfg.accel_limit,
    }


def _strict(cls, data, what: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{what} must be an object")
    names = {f.name for f in fields(cls)}
    extra = set(data) - names
    if extra:
        raise ConfigError(f"unknown field(s) in {what}: {', '.join(sorted(extra))}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"bad {what}: {exc}") from exc


def config_from_dict(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    extra = set(data) - set(_TOP_FIELDS) - set(_OPTIONAL_FIELDS)
    if extra:
        raise ConfigError(f"unknown field(s): {', '.join(sorted(extra))}")
    missing = set(_TOP_FIELDS) - set(data)
    if missing:
        raise ConfigError(f"missing field(s): {', '.join(sorted(missing))}")
    x0 = data["x0"]
    if not isinstance(x0, dict) or set(x0) - {"r", "v", "att", "Omega"} or "r" not in x0:
        raise ConfigError("x0 must be an object with r and optional v, att, Omega")
    try:
        state = QuadState(x0["r"], x0.get("v", [0, 0, 0]), x0.get("att", [0, 0, 0]), x0.get("Omega", [0, 0, 0]))
    except ValueError as exc:
        raise ConfigError(f"bad x0: {exc}") from exc
    gains = data["pd_gains"]
    pd = _strict(PDGains, gains, "pd_gains")
    pd = replace(pd, kp=tuple(float(k) for k in np.broadcast_to(pd.kp, 3)),
                 kd=tuple(float(k) for k in np.broadcast_to(pd.kd, 3)))
    kwargs = {
        "kind": data["kind"],
        "obstacle": _strict(Obstacle, data["obstacle"], "obstacle") if data["obstacle"] is not None else None,
        "box": _strict(BoxBounds, data["box"], "box") if data["box"] is not None else None,
        "x0": state,
        "target": np.asarray(data["target"], dtype=float),
        "duration": float(data["duration"]),
        "noise_scale": float(data["noise_scale"]),
        "disturbance_amp": float(data["disturbance_amp"]),
        "disturbance_freq": float(data["disturbance_freq"]),
        "seed": int(data["seed"]),
        "gamma": float(data["gamma"]),
        "pd_gains": pd,
    }
    for key in _OPTIONAL_FIELDS:
        if key in data:
            kwargs[key] = tuple(data[key]) if key == "disturbance_axes" else data[key]
    try:
        return ScenarioConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)


def save_config(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2) + "\n", encoding="utf-8")


def resolve_scenario(spec: str) -> ScenarioConfig:
    """Built-in name or path to a JSON document."""
    if spec in SCENARIO_NAMES:
        return paper_scenario(spec)
    if spec.endswith(".json") or Path(spec).is_file():
        return load_config(spec)
    raise UnknownScenarioError(spec)
