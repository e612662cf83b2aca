"""Experiment configuration, the closed-loop simulation and CSV telemetry.

One step of the loop: render the camera view from the current spacing,
synthesize the reference view, form the control force from the pixel error,
then integrate the error dynamics one RK4 step with the force held constant
(the camera and controller run once per integration step).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import analysis
from .control import ControllerConfig, generalized_pixel_control, pixel_control
from .dynamics import VehicleParams, error_deriv, rk4_step
from .errors import ConfigError, ObjectNotFoundError, SimulationAbort
from .scene import BackgroundParams, SceneParams, render, write_ppm
from .viewsynth import background_view, synthesize

__all__ = [
    "LyapunovSettings",
    "ExperimentConfig",
    "TrajectoryRecord",
    "TELEMETRY_HEADER",
    "config_from_dict",
    "config_to_dict",
    "load_config",
    "save_config",
    "run_closed_loop",
    "telemetry_csv",
    "write_telemetry",
]

TELEMETRY_HEADER = "t,s,v1,v2,x1,x2,x3,u,img_err,V,Vdot"


@dataclass(frozen=True)
class LyapunovSettings:
    """Per-run Lyapunov logging: weights built from w1 and the margin."""

    enabled: bool = False
    w1: float = 1.0
    margin: float = 1.25


@dataclass(frozen=True)
class ExperimentConfig:
    vehicle: VehicleParams = VehicleParams()
    scene: SceneParams = SceneParams()
    controller: ControllerConfig = ControllerConfig(gain=1.0 / 50.0)
    s_init: float = 10.0
    s_bar: float = 10.0
    v_bar: float = 10.0
    v1_init: float = 10.0
    v2_init: float = 10.0
    duration: float = 60.0
    dt: float = 0.05
    output_dir: str = "out"
    frame_stride: int = 0
    seed: int = 0
    lyapunov: LyapunovSettings = LyapunovSettings()

    def __post_init__(self):
        if self.duration <= 0.0 or self.dt <= 0.0:
            raise ConfigError("duration and dt must be > 0")
        for name in ("s_init", "s_bar"):
            v = getattr(self, name)
            if not (self.scene.s_min <= v <= self.scene.s_max):
                raise ConfigError(
                    f"{name} = {v} outside renderable range "
                    f"[{self.scene.s_min}, {self.scene.s_max}]"
                )
        if self.frame_stride < 0:
            raise ConfigError("frame_stride must be >= 0")

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.dt))


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    names = {f.name for f in cls.__dataclass_fields__.values()}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return data


_NESTED = {
    "vehicle": VehicleParams,
    "controller": ControllerConfig,
    "lyapunov": LyapunovSettings,
}


def config_from_dict(data: dict) -> ExperimentConfig:
    """Build a config from a JSON-shaped dict, rejecting unknown keys."""
    data = dict(_build(ExperimentConfig, data, "config"))
    try:
        for key, cls in _NESTED.items():
            if key in data:
                data[key] = cls(**_build(cls, data[key], key))
        if "scene" in data:
            sdata = dict(_build(SceneParams, data["scene"], "scene"))
            if "background" in sdata:
                bdata = _build(BackgroundParams, sdata["background"], "background")
                sdata["background"] = BackgroundParams(
                    **{k: tuple(v) if k.endswith("_color") else v
                       for k, v in bdata.items()}
                )
            for key in ("object_color",):
                if key in sdata:
                    sdata[key] = tuple(sdata[key])
            data["scene"] = SceneParams(**sdata)
        return ExperimentConfig(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def config_to_dict(cfg: ExperimentConfig) -> dict:
    data = asdict(cfg)

    def detuple(obj):
        if isinstance(obj, tuple):
            return [detuple(v) for v in obj]
        if isinstance(obj, dict):
            return {k: detuple(v) for k, v in obj.items()}
        return obj

    return detuple(data)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data)


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2)
        fh.write("\n")


@dataclass
class TrajectoryRecord:
    """Logged closed-loop run; every field is one column over time."""

    t: np.ndarray
    s: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    x3: np.ndarray
    u: np.ndarray
    img_err: np.ndarray
    V: np.ndarray
    Vdot: np.ndarray
    frames: list = field(default_factory=list)


def run_closed_loop(cfg: ExperimentConfig) -> TrajectoryRecord:
    """Simulate the pixel-in-the-loop system and log telemetry.

    Frames are dumped as PPM whenever ``cfg.frame_stride > 0``: one per
    stride plus the final state.  Raises SimulationAbort when the
    synthesizer loses the object (a diagnostic frame is written to the
    output directory first) or when the state stops being finite.
    """
    p = cfg.vehicle
    scene = cfg.scene
    ctl = cfg.controller
    f2bar = p.alpha2 * cfg.v_bar

    x = np.array(
        [cfg.v_bar - cfg.v1_init, cfg.s_bar - cfg.s_init, cfg.v_bar - cfg.v2_init]
    )
    steps = cfg.steps
    cols = {k: np.empty(steps + 1) for k in
            ("t", "s", "v1", "v2", "x1", "x2", "x3", "u", "img_err", "V", "Vdot")}
    frames: list[tuple[int, Path]] = []

    weights = None
    if cfg.lyapunov.enabled:
        weights = analysis.lyapunov_weights(p, cfg.lyapunov.w1, cfg.lyapunov.margin)

    outdir = Path(cfg.output_dir)

    for k in range(steps + 1):
        t = k * cfg.dt
        if not np.all(np.isfinite(x)):
            raise SimulationAbort(f"non-finite state {x} at t = {t:.3f}")
        s = cfg.s_bar - x[1]
        if not (scene.s_min <= s <= scene.s_max):
            raise SimulationAbort(
                f"spacing {s:.3f} left the renderable range at t = {t:.3f}"
            )
        y = render(s, scene)

        try:
            rep = synthesize(cfg.s_bar, y, scene)
            if ctl.mode == "generalized":
                y0 = background_view(y, scene, ctl.s0)
                u = generalized_pixel_control(y, rep.output, y0, ctl)
            else:
                u = pixel_control(y, rep.output, ctl)
        except ObjectNotFoundError as exc:
            outdir.mkdir(parents=True, exist_ok=True)
            diag = outdir / f"diag_step{k:06d}.ppm"
            write_ppm(y, diag)
            raise SimulationAbort(
                f"object lost at t = {t:.3f}; frame dumped to {diag}"
            ) from exc

        cols["t"][k] = t
        cols["s"][k] = s
        cols["v1"][k] = cfg.v_bar - x[0]
        cols["v2"][k] = cfg.v_bar - x[2]
        cols["x1"][k] = x[0]
        cols["x2"][k] = x[1]
        cols["x3"][k] = x[2]
        cols["u"][k] = u
        cols["img_err"][k] = np.linalg.norm((rep.output - y).ravel())
        if weights is not None:
            cols["V"][k] = analysis.lyapunov_V(
                x[1], x[2], weights, cfg.s_bar, scene, ctl
            )
            cols["Vdot"][k] = analysis.lyapunov_Vdot(
                x[1], x[2], u, weights, p, cfg.s_bar, scene, ctl
            )
        else:
            cols["V"][k] = math.nan
            cols["Vdot"][k] = math.nan

        if cfg.frame_stride > 0 and (k % cfg.frame_stride == 0 or k == steps):
            outdir.mkdir(parents=True, exist_ok=True)
            path = outdir / f"frame_{k:06d}.ppm"
            write_ppm(y, path)
            frames.append((k, path))

        if k < steps:
            x = rk4_step(x, lambda xv: error_deriv(xv, u, p), cfg.dt)

    return TrajectoryRecord(frames=frames, **cols)


def _fmt(v: float) -> str:
    if math.isnan(v):
        return ""
    return format(v, ".17g")


def telemetry_csv(rec: TrajectoryRecord) -> str:
    """Serialize a run to CSV: fixed header, LF endings, 17 significant
    digits so values round-trip exactly."""
    lines = [TELEMETRY_HEADER]
    for k in range(rec.t.size):
        lines.append(",".join(_fmt(getattr(rec, col)[k])
                              for col in TELEMETRY_HEADER.split(",")))
    return "\n".join(lines) + "\n"


def write_telemetry(rec: TrajectoryRecord, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(telemetry_csv(rec))
