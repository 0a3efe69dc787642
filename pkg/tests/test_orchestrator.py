from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

import mavbench.orchestrator as orchestrator_module
from mavbench.config import ScenarioConfig
from mavbench.event_logger import EventLogger
from mavbench.exceptions import ConfigError, SimulationError
from mavbench.orchestrator import Orchestrator, check_pairs, run_suite, write_outputs
from mavbench.simulator import LOG_COLUMNS, SimLog

from .conftest import ScenarioFactory


def test_pair_with_mismatched_weights_is_rejected(scenario: ScenarioFactory) -> None:
    lmpc = scenario(name="pair", controller="lmpc")
    nmpc = scenario(name="pair", controller="nmpc", ocp={"q_position": [1.0, 1.0, 1.0]})
    with pytest.raises(ConfigError, match="mismatched"):
        check_pairs([lmpc, nmpc])


def test_pair_with_mismatched_horizon_is_rejected(scenario: ScenarioFactory) -> None:
    lmpc = scenario(name="pair", controller="lmpc")
    nmpc = scenario(name="pair", controller="nmpc", ocp={"horizon": 10})
    with pytest.raises(ConfigError):
        Orchestrator([lmpc, nmpc])


def test_duplicate_controller_is_rejected(scenario: ScenarioFactory) -> None:
    with pytest.raises(ConfigError, match="more than once"):
        check_pairs([scenario(name="dup", controller="both"), scenario(name="dup", controller="lmpc")])


def test_split_pair_is_accepted(scenario: ScenarioFactory) -> None:
    check_pairs([scenario(name="pair", controller="lmpc"), scenario(name="pair", controller="nmpc")])
    check_pairs([scenario(name="a", controller="lmpc"), scenario(name="b", controller="lmpc", ocp={"horizon": 5})])


def test_empty_suite() -> None:
    with pytest.raises(ConfigError, match="no scenarios"):
        Orchestrator([])


def test_hover_suite(scenario: ScenarioFactory) -> None:
    events = EventLogger()
    orch = Orchestrator([scenario(name="hover", simulation={"duration": 2.5})], max_workers=2, events=events)
    result = orch.run()

    assert not result.errors
    [entry] = result.report["scenarios"]
    assert entry["scenario"] == "hover"
    assert entry["nmpc_faster"] is None
    assert sorted(entry["controllers"]) == ["lmpc", "nmpc"]
    for ctrl, m in entry["controllers"].items():
        assert m["rmse_total_cm"] <= 1e-4
        assert m["faults"] == 0
        assert "solve_time_mean_ms" not in m
        assert result.timing[f"hover/{ctrl}"]["solve_time_mean_ms"] >= 0.0
    assert orch.get_status() == [{"run": "hover/lmpc", "status": "done"}, {"run": "hover/nmpc", "status": "done"}]
    assert events.count("suite_started") == 1
    assert events.get_recent_events(limit=1)[0]["message"] == "2 runs finished, 0 aborted"


def test_split_pair_merges_into_one_entry(scenario: ScenarioFactory) -> None:
    result = run_suite(
        [
            scenario(name="pair", controller="nmpc", simulation={"duration": 0.5}, metrics={"transient": 0.1}),
            scenario(name="pair", controller="lmpc", simulation={"duration": 0.5}, metrics={"transient": 0.1}),
        ]
    )
    [entry] = result.report["scenarios"]
    assert sorted(entry["controllers"]) == ["lmpc", "nmpc"]


def test_report_is_reproducible(tmp_path: Path, scenario: ScenarioFactory) -> None:
    cfg = scenario(
        name="gusty",
        controller="lmpc",
        wind={"mode": "gusty", "speed": 5.0},
        noise={"enabled": True},
        simulation={"duration": 1.0, "seed": 4},
        metrics={"transient": 0.5},
    )
    first, second = tmp_path / "first", tmp_path / "second"
    write_outputs(run_suite([cfg]), first)
    write_outputs(run_suite([cfg]), second)
    assert (first / "report.json").read_bytes() == (second / "report.json").read_bytes()
    assert (first / "gusty" / "lmpc" / "log.csv").read_bytes() == (second / "gusty" / "lmpc" / "log.csv").read_bytes()


def test_write_outputs(tmp_path: Path, scenario: ScenarioFactory) -> None:
    cfg = scenario(name="short", controller="lmpc", simulation={"duration": 0.5}, metrics={"transient": 0.2})
    result = run_suite([cfg])
    write_outputs(result, tmp_path)

    run_dir = tmp_path / "short" / "lmpc"
    for name in ("log.csv", "timing.csv", "events.json", "metrics.json"):
        assert (run_dir / name).is_file()
    for name in ("report.json", "timing.json", "report.txt"):
        assert (tmp_path / name).is_file()

    report = json.loads((tmp_path / "report.json").read_text())
    assert report["schema_version"] == 1
    assert 0 < report["scenarios"][0]["controllers"]["lmpc"]["samples"] <= 50
    metrics = json.loads((run_dir / "metrics.json").read_text())
    assert metrics == report["scenarios"][0]["controllers"]["lmpc"]
    events = json.loads((run_dir / "events.json").read_text())
    assert events[0]["type"] == "scenario_started"

    table = (tmp_path / "report.txt").read_text()
    assert table.splitlines()[0].split() == [
        "scenario",
        "ctrl",
        "rmse_x",
        "rmse_y",
        "rmse_z",
        "rmse_cm",
        "rise_s",
        "over_%",
        "mean_ms",
        "max_ms",
        "faults",
    ]
    assert table.splitlines()[1].split()[:2] == ["short", "lmpc"]


def test_aborted_run_is_reported(
    tmp_path: Path, scenario: ScenarioFactory, monkeypatch: pytest.MonkeyPatch
) -> None:
    real_run = orchestrator_module.run_scenario

    def flaky(cfg: ScenarioConfig, controller: str | None = None) -> SimLog:
        if controller == "nmpc":
            partial = SimLog(cfg.name, "nmpc", np.zeros((3, len(LOG_COLUMNS))), np.zeros(3))
            raise SimulationError("plant diverged", log=partial)
        return real_run(cfg, controller)

    monkeypatch.setattr(orchestrator_module, "run_scenario", flaky)
    orch = Orchestrator([scenario(name="abort", simulation={"duration": 0.5}, metrics={"transient": 0.2})])
    result = orch.run()

    assert result.errors == {("abort", "nmpc"): "plant diverged"}
    ctrls = result.report["scenarios"][0]["controllers"]
    assert ctrls["nmpc"] == {"error": "plant diverged"}
    assert "rmse_total_cm" in ctrls["lmpc"]
    assert {"run": "abort/nmpc", "status": "aborted"} in orch.get_status()
    assert "aborted" in result.table()

    write_outputs(result, tmp_path)
    assert (tmp_path / "abort" / "nmpc" / "log.csv").is_file()


def test_step_suite_compares_rise_times(scenario: ScenarioFactory) -> None:
    cfg = scenario(name="step", trajectory={"preset": "step", "offset": [1.0, 0.0, 0.0]}, simulation={"duration": 4.0})
    result = run_suite([cfg])
    [entry] = result.report["scenarios"]
    assert entry["kind"] == "step"
    for m in entry["controllers"].values():
        assert m["overshoot_pct"] is not None
        assert m["overshoot_pct"] >= 0.0
        assert "rise_time_s" in m
    rise = [entry["controllers"][c]["rise_time_s"] for c in ("lmpc", "nmpc")]
    if None in rise:
        assert entry["nmpc_faster"] is None
    else:
        assert entry["nmpc_faster"] is (rise[1] < rise[0])


def test_run_too_short_for_transient_is_reported_not_raised(tmp_path: Path, scenario: ScenarioFactory) -> None:
    ok = scenario(name="long", controller="lmpc", simulation={"duration": 2.5})
    short = scenario(name="short", controller="lmpc", simulation={"duration": 1.0})
    events = EventLogger()
    result = Orchestrator([ok, short], events=events).run()

    assert set(result.errors) == {("short", "lmpc")}
    assert "transient" in result.errors[("short", "lmpc")]
    by_name = {entry["scenario"]: entry for entry in result.report["scenarios"]}
    assert "rmse_total_cm" in by_name["long"]["controllers"]["lmpc"]
    assert "error" in by_name["short"]["controllers"]["lmpc"]
    assert "long/lmpc" in result.timing
    assert "short/lmpc" not in result.timing
    assert events.get_recent_events(limit=1)[0]["message"] == "1 runs finished, 1 aborted"

    write_outputs(result, tmp_path)
    assert (tmp_path / "short" / "lmpc" / "log.csv").is_file()
    assert "aborted" in result.table()
