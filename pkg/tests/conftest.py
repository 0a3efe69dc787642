from __future__ import annotations

from collections.abc import Callable
from typing import Any

import numpy as np
import pytest

from mavbench.config import SCHEMA_VERSION, ScenarioConfig
from mavbench.models import ModelParams, NoiseConfig, OcpConfig
from mavbench.simulator import LOG_COLUMNS, SimLog

ScenarioFactory = Callable[..., ScenarioConfig]


@pytest.fixture
def params() -> ModelParams:
    return ModelParams()


@pytest.fixture
def ocp() -> OcpConfig:
    return OcpConfig()


@pytest.fixture
def noise() -> NoiseConfig:
    return NoiseConfig()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def scenario() -> ScenarioFactory:
    """builds a validated scenario from section overrides"""

    def _make(name: str = "test", controller: str = "both", **sections: Any) -> ScenarioConfig:
        raw: dict[str, Any] = {"schema_version": SCHEMA_VERSION, "name": name, "controller": controller}
        raw.update(sections)
        return ScenarioConfig.from_dict(raw)

    return _make


def make_log(t: np.ndarray, position: np.ndarray, reference: np.ndarray, **columns: np.ndarray) -> SimLog:
    """synthetic log with the given trajectories, other columns zero"""
    rows = np.zeros((t.size, len(LOG_COLUMNS)))
    rows[:, LOG_COLUMNS.index("t")] = t
    for i, name in enumerate(("x", "y", "z")):
        rows[:, LOG_COLUMNS.index(name)] = position[:, i]
    for i, name in enumerate(("ref_x", "ref_y", "ref_z")):
        rows[:, LOG_COLUMNS.index(name)] = reference[:, i]
    for name, values in columns.items():
        rows[:, LOG_COLUMNS.index(name)] = values
    return SimLog(scenario="synthetic", controller="lmpc", rows=rows, solve_time=np.full(t.size, 1e-3))


@pytest.fixture
def synthetic_log() -> Callable[..., SimLog]:
    return make_log
