"""scenario files: JSON merged over SCENARIO_DEFAULTS, coerced against the default types, unknown keys rejected"""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .exceptions import ConfigError, MavBenchException
from .models import (
    DEFAULT_Q_ATTITUDE,
    DEFAULT_Q_POSITION,
    DEFAULT_Q_VELOCITY,
    DEFAULT_Q_YAW,
    DEFAULT_R_COMMAND,
    GRAVITY,
    NEO_MASS,
    NEO_THRUST_MAX_N,
    NEO_THRUST_MIN_N,
    InputLimits,
    ModelParams,
    NoiseConfig,
    OcpConfig,
)
from .simulator import PlantMismatch, WindMode, WindProfile
from .trajectory import PolySegment, PolyTrajectory, Trajectory, figure8, hover, step

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

SettingValue = bool | int | float | str | list[Any] | None

CONTROLLERS = ("lmpc", "nmpc", "both")
PRESETS = ("hover", "step", "figure8", "segments")
TERMINAL_CHOICES = ("riccati", "state_weight")

SCENARIO_DEFAULTS: dict[str, dict[str, SettingValue]] = {
    "vehicle": {
        "mass": NEO_MASS,
        "g": GRAVITY,
        "k_drag": 0.01,
        "tau_phi": 0.1901,
        "tau_theta": 0.1721,
        "k_phi": 0.91,
        "k_theta": 0.96,
        "thrust_min_n": NEO_THRUST_MIN_N,
        "thrust_max_n": NEO_THRUST_MAX_N,
        "tilt_limit_deg": 45.0,
    },
    "plant": {
        "mass_scale": 1.0,
        "drag_scale": 1.0,
        "tau_scale": 1.0,
        "substeps": 10,
    },
    "ocp": {
        "horizon": 20,
        "dt_pred": 0.1,
        "q_position": list(DEFAULT_Q_POSITION),
        "q_velocity": list(DEFAULT_Q_VELOCITY),
        "q_attitude": list(DEFAULT_Q_ATTITUDE),
        "q_yaw": DEFAULT_Q_YAW,
        "r_command": list(DEFAULT_R_COMMAND),
        "terminal": "riccati",
        "psi_rate_max": None,
    },
    "noise": {
        "enabled": False,
        "q_position": 1e-6,
        "q_velocity": 1e-4,
        "q_attitude": 1e-5,
        "q_force": 0.5,
        "sigma_position": 1e-3,
        "sigma_velocity": 1e-2,
        "sigma_attitude_deg": 0.2,
    },
    "ekf": {
        "enabled": True,
        "force_prior_std": 2.0,
    },
    "wind": {
        "mode": "off",
        "force": [0.0, 0.0, 0.0],
        "speed": None,
        "direction": [1.0, 0.0, 0.0],
        "drag_coefficient": 0.3,
        "gust_std": 0.5,
        "gust_bandwidth": 1.0,
        "gust_components": 16,
    },
    "trajectory": {
        "preset": "hover",
        "position": [0.0, 0.0, 1.0],
        "offset": [2.0, 0.0, 0.0],
        "t_step": 1.0,
        "laps": 1,
        "segments": [],
    },
    "simulation": {
        "duration": 10.0,
        "control_dt": 0.01,
        "seed": 0,
    },
    "metrics": {
        "transient": 2.0,
    },
}

_TOP_LEVEL_KEYS = {"schema_version", "name", "controller", *SCENARIO_DEFAULTS}
_SEGMENT_KEYS = {"coefficients", "duration", "yaw"}


def _coerce(raw: Any, default: SettingValue, key: str) -> SettingValue:
    if default is None:
        if raw is None:
            return None
        return float(raw)

    target = type(default)
    if target is bool:
        return raw.lower() in ("true", "1", "yes") if isinstance(raw, str) else bool(raw)
    if target is int:
        return int(float(raw))
    if target is float:
        return float(raw)
    if target is list:
        if not isinstance(raw, list):
            raise ConfigError(f"{key} must be a list, got {type(raw).__name__}")
        if default and len(raw) != len(default):
            raise ConfigError(f"{key} must have {len(default)} entries, got {len(raw)}")
        return [float(v) for v in raw] if default else list(raw)
    return str(raw)


def _merge_block(name: str, raw: Any) -> dict[str, SettingValue]:
    defaults = SCENARIO_DEFAULTS[name]
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name} must be an object")
    unknown = sorted(set(raw) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown keys in section {name}: {', '.join(unknown)}")
    merged: dict[str, SettingValue] = copy.deepcopy(defaults)
    for key, value in raw.items():
        try:
            merged[key] = _coerce(value, defaults[key], f"{name}.{key}")
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid value for {name}.{key}: {value!r} ({e})")
    return merged


def _check_segments(raw: list[Any]) -> list[dict[str, Any]]:
    segments = []
    for i, seg in enumerate(raw):
        if not isinstance(seg, dict):
            raise ConfigError(f"trajectory.segments[{i}] must be an object")
        unknown = sorted(set(seg) - _SEGMENT_KEYS)
        if unknown or "coefficients" not in seg or "duration" not in seg:
            raise ConfigError(f"trajectory.segments[{i}] needs coefficients and duration, unknown keys {unknown}")
        try:
            segments.append(
                {
                    "coefficients": [[float(c) for c in axis] for axis in seg["coefficients"]],
                    "duration": float(seg["duration"]),
                    "yaw": [float(c) for c in seg.get("yaw", [0.0])],
                }
            )
        except (TypeError, ValueError) as e:
            raise ConfigError(f"trajectory.segments[{i}] is malformed: {e}")
    return segments


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    controller: str
    sections: dict[str, dict[str, SettingValue]]

    @classmethod
    def from_dict(cls, raw: Any) -> ScenarioConfig:
        if not isinstance(raw, dict):
            raise ConfigError("scenario config must be a JSON object")
        unknown = sorted(set(raw) - _TOP_LEVEL_KEYS)
        if unknown:
            raise ConfigError(f"unknown top-level keys: {', '.join(unknown)}")
        version = raw.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version!r}, expected {SCHEMA_VERSION}")
        controller = str(raw.get("controller", "both"))
        if controller not in CONTROLLERS:
            raise ConfigError(f"controller must be one of {CONTROLLERS}, got {controller!r}")

        sections = {name: _merge_block(name, raw.get(name, {})) for name in SCENARIO_DEFAULTS}
        traj = sections["trajectory"]
        if traj["preset"] not in PRESETS:
            raise ConfigError(f"trajectory.preset must be one of {PRESETS}, got {traj['preset']!r}")
        traj["segments"] = _check_segments(traj["segments"])  # type: ignore[arg-type]
        if traj["preset"] == "segments" and not traj["segments"]:
            raise ConfigError("trajectory.preset 'segments' needs a non-empty segments list")
        if sections["ocp"]["terminal"] not in TERMINAL_CHOICES:
            raise ConfigError(f"ocp.terminal must be one of {TERMINAL_CHOICES}")
        if sections["wind"]["mode"] not in {m.value for m in WindMode}:
            raise ConfigError(f"wind.mode must be one of {[m.value for m in WindMode]}")

        cfg = cls(name=str(raw.get("name", "scenario")), controller=controller, sections=sections)
        # build every typed view once so value errors surface at load time
        try:
            cfg.model_params()
            cfg.ocp_config()
            cfg.noise_config()
            cfg.wind_profile()
            cfg.plant_mismatch()
            cfg.trajectory()
        except ConfigError:
            raise
        except MavBenchException as e:
            raise ConfigError(f"invalid scenario {cfg.name}: {e.message}")
        sim = sections["simulation"]
        if not (float(sim["duration"]) > 0 and float(sim["control_dt"]) > 0):  # type: ignore[arg-type]
            raise ConfigError("simulation.duration and simulation.control_dt must be positive")
        if int(sections["plant"]["substeps"]) < 1:  # type: ignore[arg-type]
            raise ConfigError("plant.substeps must be >= 1")
        return cfg

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"schema_version": SCHEMA_VERSION, "name": self.name, "controller": self.controller}
        out.update(copy.deepcopy(self.sections))
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def with_overrides(self, **overrides: Any) -> ScenarioConfig:
        """copy with dotted-path overrides, e.g. {"simulation.seed": 3, "controller": "lmpc"}"""
        raw = self.to_dict()
        for path, value in overrides.items():
            section, _, key = path.partition(".")
            if key:
                raw.setdefault(section, {})[key] = value
            else:
                raw[section] = value
        return ScenarioConfig.from_dict(raw)

    @property
    def kind(self) -> str:
        return str(self.sections["trajectory"]["preset"])

    @property
    def seed(self) -> int:
        return int(self.sections["simulation"]["seed"])  # type: ignore[arg-type]

    @property
    def duration(self) -> float:
        return float(self.sections["simulation"]["duration"])  # type: ignore[arg-type]

    @property
    def control_dt(self) -> float:
        return float(self.sections["simulation"]["control_dt"])  # type: ignore[arg-type]

    @property
    def substeps(self) -> int:
        return int(self.sections["plant"]["substeps"])  # type: ignore[arg-type]

    @property
    def ekf_enabled(self) -> bool:
        return bool(self.sections["ekf"]["enabled"])

    @property
    def force_prior_std(self) -> float:
        return float(self.sections["ekf"]["force_prior_std"])  # type: ignore[arg-type]

    @property
    def noise_enabled(self) -> bool:
        return bool(self.sections["noise"]["enabled"])

    @property
    def transient(self) -> float:
        return float(self.sections["metrics"]["transient"])  # type: ignore[arg-type]

    def controllers(self) -> tuple[str, ...]:
        return ("lmpc", "nmpc") if self.controller == "both" else (self.controller,)

    def model_params(self) -> ModelParams:
        v: dict[str, Any] = self.sections["vehicle"]
        limits = InputLimits.from_newtons(
            v["mass"], v["thrust_min_n"], v["thrust_max_n"], tilt_limit=math.radians(v["tilt_limit_deg"])
        )
        return ModelParams(
            mass=v["mass"],
            g=v["g"],
            k_drag=v["k_drag"],
            tau_phi=v["tau_phi"],
            tau_theta=v["tau_theta"],
            k_phi=v["k_phi"],
            k_theta=v["k_theta"],
            limits=limits,
        )

    def ocp_config(self) -> OcpConfig:
        o: dict[str, Any] = self.sections["ocp"]
        q_x = np.diag([*o["q_position"], *o["q_velocity"], *o["q_attitude"]])
        return OcpConfig(
            horizon=o["horizon"],
            dt_pred=o["dt_pred"],
            q_x=q_x,
            r_u=np.diag(o["r_command"]),
            p_terminal=None if o["terminal"] == "riccati" else q_x.copy(),
            q_yaw=o["q_yaw"],
            psi_rate_max=o["psi_rate_max"],
        )

    def noise_config(self) -> NoiseConfig:
        n: dict[str, Any] = self.sections["noise"]
        return NoiseConfig(
            q_position=n["q_position"],
            q_velocity=n["q_velocity"],
            q_attitude=n["q_attitude"],
            q_force=n["q_force"],
            sigma_position=n["sigma_position"],
            sigma_velocity=n["sigma_velocity"],
            sigma_attitude=math.radians(n["sigma_attitude_deg"]),
        )

    def wind_profile(self) -> WindProfile:
        w: dict[str, Any] = self.sections["wind"]
        return WindProfile(
            mode=WindMode(w["mode"]),
            force=tuple(w["force"]),
            speed=w["speed"],
            direction=tuple(w["direction"]),
            drag_coefficient=w["drag_coefficient"],
            gust_std=w["gust_std"],
            gust_bandwidth=w["gust_bandwidth"],
            gust_components=w["gust_components"],
            seed=self.seed,
        )

    def plant_mismatch(self) -> PlantMismatch:
        p: dict[str, Any] = self.sections["plant"]
        return PlantMismatch(mass_scale=p["mass_scale"], drag_scale=p["drag_scale"], tau_scale=p["tau_scale"])

    def trajectory(self) -> Trajectory:
        t: dict[str, Any] = self.sections["trajectory"]
        preset = t["preset"]
        if preset == "hover":
            return hover(t["position"])
        if preset == "step":
            return step(t["position"], t["offset"], t_step=t["t_step"])
        if preset == "figure8":
            return figure8(t["position"], laps=t["laps"])
        return PolyTrajectory(
            segments=tuple(
                PolySegment.from_coefficients(s["coefficients"], s["duration"], s["yaw"]) for s in t["segments"]
            )
        )


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}")
    cfg = ScenarioConfig.from_dict(raw)
    logger.info(f"loaded scenario {cfg.name} from {path} (controller {cfg.controller}, preset {cfg.kind})")
    return cfg


def load_suite(path: str | Path) -> list[ScenarioConfig]:
    """a suite file is {"schema_version": 1, "scenarios": [...]}; a single scenario file is a suite of one"""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as e:
        raise ConfigError(f"cannot read suite {path}: {e}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"suite {path} is not valid JSON: {e}")
    if isinstance(raw, dict) and "scenarios" in raw:
        if raw.get("schema_version") != SCHEMA_VERSION or set(raw) - {"schema_version", "scenarios"}:
            raise ConfigError(f"suite {path} must hold only schema_version {SCHEMA_VERSION} and scenarios")
        scenarios = raw["scenarios"]
        if not isinstance(scenarios, list) or not all(isinstance(s, dict) for s in scenarios):
            raise ConfigError(f"suite {path}: scenarios must be a list of objects")
        return [ScenarioConfig.from_dict({"schema_version": SCHEMA_VERSION, **s}) for s in scenarios]
    return [ScenarioConfig.from_dict(raw)]


def default_suite() -> list[ScenarioConfig]:
    """hover with and without wind, 2 m step, figure-eight in wind"""
    base = {"schema_version": SCHEMA_VERSION, "controller": "both"}
    wind = {"mode": "constant", "speed": 11.0, "direction": [0.0, 1.0, 0.0]}
    return [
        ScenarioConfig.from_dict({**base, "name": "hover", "simulation": {"duration": 15.0}}),
        ScenarioConfig.from_dict(
            {
                **base,
                "name": "hover_wind",
                "wind": wind,
                "simulation": {"duration": 15.0},
            }
        ),
        ScenarioConfig.from_dict({**base, "name": "step_x", "trajectory": {"preset": "step"}}),
        ScenarioConfig.from_dict(
            {
                **base,
                "name": "figure8",
                "trajectory": {"preset": "figure8", "laps": 2},
                "wind": wind,
                "simulation": {"duration": 16.0},
            }
        ),
    ]
