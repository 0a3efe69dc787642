from __future__ import annotations

import json
import logging
import math
from typing import TypedDict

import numpy as np

from .exceptions import MetricsError
from .models import Vec
from .simulator import SimLog

logger = logging.getLogger(__name__)

DEFAULT_TRANSIENT = 2.0
RISE_LOW = 0.1
RISE_HIGH = 0.9
# reference moves smaller than this do not count as a step
_STEP_THRESHOLD = 1e-9


class StepMetrics(TypedDict):
    axis: int
    amplitude: float
    rise_time_s: float | None
    overshoot_pct: float


class MetricsReport(TypedDict):
    scenario: str
    controller: str
    kind: str
    samples: int
    rmse_cm: list[float]
    rmse_total_cm: float
    rise_time_s: float | None
    overshoot_pct: float | None
    solve_time_mean_ms: float
    solve_time_max_ms: float
    faults: int


def _first_crossing(t: Vec, s: Vec, level: float) -> float | None:
    # linear interpolation between the samples that bracket the first crossing
    above = np.flatnonzero(s >= level)
    if above.size == 0:
        return None
    i = int(above[0])
    if i == 0:
        return float(t[0])
    s0, s1 = float(s[i - 1]), float(s[i])
    frac = (level - s0) / (s1 - s0)
    return float(t[i - 1] + frac * (t[i] - t[i - 1]))


def step_metrics(log: SimLog) -> StepMetrics:
    """10-90% rise time and overshoot along the axis where the final reference is farthest from the start"""
    if len(log) == 0:
        raise MetricsError("empty log")
    ref = log.reference
    start = log.position[0]
    jump = ref[-1] - start
    axis = int(np.argmax(np.abs(jump)))
    amplitude = float(jump[axis])
    if abs(amplitude) <= _STEP_THRESHOLD:
        raise MetricsError(f"log {log.scenario}/{log.controller} has no step in its reference")

    y = log.position[:, axis]
    s = (y - start[axis]) / amplitude
    t_low = _first_crossing(log.t, s, RISE_LOW)
    t_high = _first_crossing(log.t, s, RISE_HIGH)
    rise = None if t_low is None or t_high is None else t_high - t_low
    overshoot = max(0.0, float(s.max()) - 1.0) * 100.0
    return {"axis": axis, "amplitude": amplitude, "rise_time_s": rise, "overshoot_pct": overshoot}


def compute_metrics(log: SimLog, kind: str, transient: float = DEFAULT_TRANSIENT) -> MetricsReport:
    if len(log) == 0:
        raise MetricsError("empty log")
    window = log.t >= transient
    if not np.any(window):
        raise MetricsError(f"no samples after the {transient}s transient (log ends at {float(log.t[-1]):.2f}s)")

    err_cm = (log.position[window] - log.reference[window]) * 100.0
    rmse = np.sqrt(np.mean(err_cm**2, axis=0))
    rmse_total = math.sqrt(float(np.mean(np.sum(err_cm**2, axis=1))))

    rise: float | None = None
    overshoot: float | None = None
    if kind == "step":
        step = step_metrics(log)
        rise = step["rise_time_s"]
        overshoot = step["overshoot_pct"]

    solve_ms = log.solve_time * 1e3
    report: MetricsReport = {
        "scenario": log.scenario,
        "controller": log.controller,
        "kind": kind,
        "samples": int(window.sum()),
        "rmse_cm": [float(v) for v in rmse],
        "rmse_total_cm": rmse_total,
        "rise_time_s": rise,
        "overshoot_pct": overshoot,
        "solve_time_mean_ms": float(solve_ms.mean()),
        "solve_time_max_ms": float(solve_ms.max()),
        "faults": int(log.column("fault").sum()),
    }
    logger.debug(f"metrics {log.scenario}/{log.controller}: rmse {rmse_total:.3f} cm, rise {rise}")
    return report


TIMING_KEYS = ("solve_time_mean_ms", "solve_time_max_ms")


def split_timing(report: MetricsReport) -> tuple[dict[str, object], dict[str, float]]:
    """(deterministic part, wall-clock part)"""
    det = {k: v for k, v in report.items() if k not in TIMING_KEYS}
    timing = {k: float(report[k]) for k in TIMING_KEYS}  # type: ignore[literal-required]
    return det, timing


def dumps(obj: object) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"
