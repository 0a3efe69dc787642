from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from mavbench.config import SCHEMA_VERSION, ScenarioConfig, default_suite, load_config, load_suite
from mavbench.exceptions import ConfigError
from mavbench.simulator import WindMode
from mavbench.trajectory import PolyTrajectory, StepTrajectory

from .conftest import ScenarioFactory


def test_defaults(scenario: ScenarioFactory) -> None:
    cfg = scenario()
    assert cfg.kind == "hover"
    assert cfg.controllers() == ("lmpc", "nmpc")
    assert cfg.seed == 0
    assert cfg.control_dt == 0.01
    assert cfg.substeps == 10
    assert cfg.ekf_enabled
    assert not cfg.noise_enabled
    assert cfg.model_params().limits.thrust_min == pytest.approx(13.5 / 3.42)
    assert cfg.ocp_config().p_terminal is None
    assert cfg.wind_profile().mode is WindMode.OFF
    assert isinstance(cfg.trajectory(), StepTrajectory)


def test_round_trip_is_a_fixed_point(scenario: ScenarioFactory) -> None:
    cfg = scenario(name="rt", trajectory={"preset": "step", "offset": [0, 1, 0]}, simulation={"seed": 7})
    again = ScenarioConfig.from_dict(json.loads(cfg.to_json()))
    assert again == cfg
    assert again.to_json() == cfg.to_json()


@pytest.mark.parametrize(
    "raw, fragment",
    [
        ({"schema_version": 2}, "schema_version"),
        ({}, "schema_version"),
        ({"schema_version": SCHEMA_VERSION, "extra": 1}, "unknown top-level"),
        ({"schema_version": SCHEMA_VERSION, "ocp": {"horizn": 10}}, "unknown keys in section ocp"),
        ({"schema_version": SCHEMA_VERSION, "controller": "pid"}, "controller"),
        ({"schema_version": SCHEMA_VERSION, "ocp": {"q_position": [1.0, 2.0]}}, "3 entries"),
        ({"schema_version": SCHEMA_VERSION, "ocp": {"terminal": "none"}}, "ocp.terminal"),
        ({"schema_version": SCHEMA_VERSION, "wind": {"mode": "hurricane"}}, "wind.mode"),
        ({"schema_version": SCHEMA_VERSION, "trajectory": {"preset": "circle"}}, "trajectory.preset"),
        ({"schema_version": SCHEMA_VERSION, "trajectory": {"preset": "segments"}}, "non-empty"),
        ({"schema_version": SCHEMA_VERSION, "simulation": {"duration": 0}}, "positive"),
        ({"schema_version": SCHEMA_VERSION, "simulation": {"seed": "abc"}}, "simulation.seed"),
        ({"schema_version": SCHEMA_VERSION, "vehicle": {"mass": -1.0}}, "mass"),
        ({"schema_version": SCHEMA_VERSION, "ekf": []}, "section ekf"),
        ([], "JSON object"),
    ],
)
def test_rejects_invalid(raw: object, fragment: str) -> None:
    with pytest.raises(ConfigError) as exc:
        ScenarioConfig.from_dict(raw)
    assert fragment in exc.value.message


def test_values_are_coerced(scenario: ScenarioFactory) -> None:
    cfg = scenario(simulation={"duration": "5", "seed": "3"}, ekf={"enabled": "yes"}, noise={"enabled": "false"})
    assert cfg.duration == 5.0
    assert cfg.seed == 3
    assert cfg.ekf_enabled is True
    assert cfg.noise_enabled is False


def test_terminal_state_weight(scenario: ScenarioFactory) -> None:
    ocp = scenario(ocp={"terminal": "state_weight"}).ocp_config()
    assert ocp.p_terminal is not None
    np.testing.assert_array_equal(ocp.p_terminal, ocp.q_x)


def test_with_overrides(scenario: ScenarioFactory) -> None:
    cfg = scenario(name="base")
    other = cfg.with_overrides(**{"simulation.seed": 11, "controller": "nmpc"})
    assert other.seed == 11
    assert other.controllers() == ("nmpc",)
    assert cfg.seed == 0
    with pytest.raises(ConfigError):
        cfg.with_overrides(**{"plant.substeps": 0})


def test_segments_preset(scenario: ScenarioFactory) -> None:
    cfg = scenario(
        trajectory={
            "preset": "segments",
            "segments": [
                {"coefficients": [[0.0, 1.0], [0.0], [1.0]], "duration": 2.0},
                {"coefficients": [[2.0], [0.0], [1.0]], "duration": 1.0, "yaw": [0.0, 0.1]},
            ],
        }
    )
    traj = cfg.trajectory()
    assert isinstance(traj, PolyTrajectory)
    assert traj.duration == pytest.approx(3.0)
    np.testing.assert_allclose(traj.sample(1.0).p, [1.0, 0.0, 1.0])


def test_segment_needs_duration(scenario: ScenarioFactory) -> None:
    with pytest.raises(ConfigError):
        scenario(trajectory={"preset": "segments", "segments": [{"coefficients": [[0.0], [0.0], [1.0]]}]})


def test_load_config(tmp_path: Path) -> None:
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps({"schema_version": 1, "name": "file", "controller": "lmpc"}))
    cfg = load_config(path)
    assert cfg.name == "file"
    assert cfg.controllers() == ("lmpc",)


def test_load_config_errors(tmp_path: Path) -> None:
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(bad)
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.json")


def test_load_suite(tmp_path: Path) -> None:
    path = tmp_path / "suite.json"
    path.write_text(
        json.dumps(
            {
                "schema_version": 1,
                "scenarios": [
                    {"name": "a", "controller": "lmpc"},
                    {"name": "a", "controller": "nmpc"},
                    {"name": "b", "trajectory": {"preset": "step"}},
                ],
            }
        )
    )
    suite = load_suite(path)
    assert [c.name for c in suite] == ["a", "a", "b"]
    assert suite[2].kind == "step"

    single = tmp_path / "single.json"
    single.write_text(json.dumps({"schema_version": 1, "name": "solo"}))
    assert [c.name for c in load_suite(single)] == ["solo"]


def test_load_suite_rejects_non_objects(tmp_path: Path) -> None:
    path = tmp_path / "suite.json"
    path.write_text(json.dumps({"schema_version": 1, "scenarios": ["hover"]}))
    with pytest.raises(ConfigError, match="list of objects"):
        load_suite(path)


def test_default_suite() -> None:
    suite = default_suite()
    by_name = {c.name: c for c in suite}
    assert sorted(by_name) == ["figure8", "hover", "hover_wind", "step_x"]
    assert {c.kind for c in suite} == {"hover", "step", "figure8"}
    assert all(c.controllers() == ("lmpc", "nmpc") for c in suite)
    assert by_name["hover"].wind_profile().mode is WindMode.OFF
    assert by_name["hover"].kind == "hover"
    for name in ("hover_wind", "figure8"):
        wind = by_name[name].wind_profile()
        assert wind.mode is WindMode.CONSTANT
        assert wind.speed == 11.0
        assert tuple(wind.direction) == (0.0, 1.0, 0.0)
