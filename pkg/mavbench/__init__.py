from __future__ import annotations

from .config import ScenarioConfig, default_suite, load_config, load_suite
from .exceptions import MavBenchException
from .lmpc import LinearMpc
from .metrics import compute_metrics
from .nmpc import NonlinearMpc
from .orchestrator import run_suite
from .simulator import SimLog, run_scenario

__all__ = [
    "LinearMpc",
    "MavBenchException",
    "NonlinearMpc",
    "ScenarioConfig",
    "SimLog",
    "compute_metrics",
    "default_suite",
    "load_config",
    "load_suite",
    "run_scenario",
    "run_suite",
]
