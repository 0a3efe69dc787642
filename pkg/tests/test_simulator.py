from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from mavbench import simulator
from mavbench.event_logger import EventLogger
from mavbench.exceptions import ModelValidityError, SimulationError
from mavbench.metrics import step_metrics
from mavbench.models import AttitudeThrustCommand, ModelParams, OcpConfig
from mavbench.simulator import (
    LOG_COLUMNS,
    Plant,
    PlantMismatch,
    SimLog,
    WindMode,
    WindProfile,
    build_controller,
    inject_wind,
    run_scenario,
)


def test_wind_off_is_zero() -> None:
    np.testing.assert_array_equal(inject_wind(WindProfile(), 3.0), 0.0)


def test_constant_wind_force() -> None:
    profile = WindProfile(mode=WindMode.CONSTANT, force=(3.0, 0.0, 0.0))
    for t in (0.0, 1.0, 100.0):
        np.testing.assert_array_equal(inject_wind(profile, t), [3.0, 0.0, 0.0])


def test_wind_speed_maps_through_drag_coefficient() -> None:
    profile = WindProfile(mode=WindMode.CONSTANT, speed=11.0, direction=(0.0, 2.0, 0.0))
    np.testing.assert_allclose(inject_wind(profile, 0.0), [0.0, 3.3, 0.0])


def test_gusts_are_seeded() -> None:
    times = np.linspace(0.0, 5.0, 50)
    a = [inject_wind(WindProfile(mode=WindMode.GUSTY, seed=4), t) for t in times]
    b = [inject_wind(WindProfile(mode=WindMode.GUSTY, seed=4), t) for t in times]
    c = [inject_wind(WindProfile(mode=WindMode.GUSTY, seed=5), t) for t in times]
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_gust_spread_matches_std() -> None:
    profile = WindProfile(mode=WindMode.GUSTY, gust_std=0.5, gust_components=64, seed=1)
    samples = np.array([inject_wind(profile, t) for t in np.linspace(0.0, 2000.0, 20000)])
    np.testing.assert_allclose(samples.std(axis=0), 0.5, rtol=0.25)


def test_wind_validation() -> None:
    with pytest.raises(ModelValidityError):
        WindProfile(mode=WindMode.CONSTANT, speed=5.0, direction=(0.0, 0.0, 0.0))
    with pytest.raises(ModelValidityError):
        WindProfile(gust_bandwidth=0.0)


def test_plant_hover_equilibrium(params: ModelParams) -> None:
    plant = Plant(params)
    x = np.array([0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    x_next, force = plant.advance(x, AttitudeThrustCommand.hover(params), WindProfile(), 0.0, 0.01, 10)
    np.testing.assert_array_equal(x_next, x)
    np.testing.assert_array_equal(force, 0.0)


def test_heavier_plant_sinks(params: ModelParams) -> None:
    plant = Plant(params, PlantMismatch(mass_scale=1.1))
    dx = plant.derivative(np.zeros(9), AttitudeThrustCommand.hover(params), np.zeros(3))
    assert dx[5] == pytest.approx(params.g / 1.1 - params.g)


def test_mismatch_validation() -> None:
    with pytest.raises(ModelValidityError):
        PlantMismatch(mass_scale=0.0)


def test_drag_dissipates_kinetic_energy(params: ModelParams) -> None:
    plant = Plant(params)
    x = np.array([0.0, 0.0, 1.0, 2.0, -1.0, 0.0, 0.0, 0.0, 0.0])
    cmd = AttitudeThrustCommand.hover(params)
    energy = [float(x[3:5] @ x[3:5])]
    for i in range(200):
        x, _ = plant.advance(x, cmd, WindProfile(), i * 0.01, 0.01, 10)
        energy.append(float(x[3:5] @ x[3:5]))
    assert all(b <= a for a, b in zip(energy, energy[1:]))
    assert energy[-1] < energy[0]


def test_build_controller_rejects_unknown(params: ModelParams, ocp: OcpConfig) -> None:
    with pytest.raises(ModelValidityError):
        build_controller("pid", params, ocp, 0.01, EventLogger())


def test_one_row_per_tick(scenario) -> None:
    cfg = scenario(controller="lmpc", simulation={"duration": 0.5})
    log = run_scenario(cfg)
    assert len(log) == 50
    assert log.rows.shape[1] == len(LOG_COLUMNS)
    np.testing.assert_allclose(log.t, 0.01 * np.arange(50))
    assert [e["type"] for e in log.events] == ["scenario_started", "scenario_finished"]
    assert log.events[-1]["timestamp"] == pytest.approx(0.5)


def test_runs_are_bit_reproducible(scenario, tmp_path: Path) -> None:
    cfg = scenario(
        controller="lmpc",
        noise={"enabled": True},
        wind={"mode": "gusty", "force": [1.0, 0.0, 0.0]},
        trajectory={"preset": "step", "t_step": 0.2, "offset": [0.5, 0.0, 0.0]},
        simulation={"duration": 1.0, "seed": 9},
    )
    first, second = run_scenario(cfg), run_scenario(cfg)
    np.testing.assert_array_equal(first.rows, second.rows)
    first.to_csv(tmp_path / "a.csv")
    second.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    other = run_scenario(cfg.with_overrides(**{"simulation.seed": 10}))
    assert not np.array_equal(first.rows, other.rows)


def test_log_csv_round_trip(scenario, tmp_path: Path) -> None:
    log = run_scenario(scenario(controller="lmpc", simulation={"duration": 0.2}))
    log.to_csv(tmp_path / "log.csv")
    log.timing_to_csv(tmp_path / "timing.csv")
    header = (tmp_path / "log.csv").read_text().splitlines()[0]
    assert header == ",".join(LOG_COLUMNS)
    loaded = SimLog.from_csv(tmp_path / "log.csv", tmp_path / "timing.csv")
    np.testing.assert_array_equal(loaded.rows, log.rows)
    np.testing.assert_array_equal(loaded.solve_time, log.solve_time)


def test_from_csv_rejects_foreign_files(tmp_path: Path) -> None:
    path = tmp_path / "other.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(SimulationError):
        SimLog.from_csv(path)


def test_validity_region() -> None:
    x = np.zeros(9)
    assert not simulator._validity_violation(x)
    x[7] = -1.6
    assert simulator._validity_violation(x)
    x[7] = 0.0
    x[0] = np.nan
    assert simulator._validity_violation(x)


def test_validity_violation_aborts_with_partial_log(scenario, monkeypatch: pytest.MonkeyPatch) -> None:
    calls = {"n": 0}

    def _violation(x: np.ndarray) -> bool:
        calls["n"] += 1
        return calls["n"] > 3

    monkeypatch.setattr(simulator, "_validity_violation", _violation)
    with pytest.raises(SimulationError) as exc:
        run_scenario(scenario(controller="lmpc", simulation={"duration": 1.0}))
    assert len(exc.value.log) == 4
    assert exc.value.log.events[-1]["type"] == "scenario_aborted"


def test_hover_is_held_exactly(scenario) -> None:
    for controller in ("lmpc", "nmpc"):
        log = run_scenario(scenario(controller=controller, simulation={"duration": 2.5}))
        err = np.abs(log.position - log.reference)[log.t >= 2.0]
        assert err.max() <= 1e-6, controller


@pytest.mark.parametrize("controller", ["lmpc", "nmpc"])
def test_lateral_force_is_rejected_with_estimator(scenario, controller: str) -> None:
    cfg = scenario(
        controller=controller,
        wind={"mode": "constant", "force": [0.0, 3.0, 0.0]},
        simulation={"duration": 6.0},
    )
    log = run_scenario(cfg)
    err = np.linalg.norm(log.position - log.reference, axis=1)[log.t >= 5.0]
    assert err.max() <= 0.01


def test_lateral_force_leaves_offset_without_estimator(scenario) -> None:
    cfg = scenario(
        controller="lmpc",
        ekf={"enabled": False},
        wind={"mode": "constant", "force": [0.0, 3.0, 0.0]},
        simulation={"duration": 6.0},
    )
    log = run_scenario(cfg)
    err = np.linalg.norm(log.position - log.reference, axis=1)[log.t >= 5.0]
    assert err.min() > 0.01


def test_nonlinear_controller_rises_faster_on_a_step(scenario, params: ModelParams) -> None:
    logs = {
        controller: run_scenario(
            scenario(controller=controller, trajectory={"preset": "step"}, simulation={"duration": 5.0})
        )
        for controller in ("lmpc", "nmpc")
    }
    lin, nonlin = step_metrics(logs["lmpc"]), step_metrics(logs["nmpc"])
    assert lin["amplitude"] == pytest.approx(2.0)
    assert lin["rise_time_s"] is not None and nonlin["rise_time_s"] is not None
    assert nonlin["rise_time_s"] < lin["rise_time_s"]
    assert lin["overshoot_pct"] <= 5.0
    assert nonlin["overshoot_pct"] <= 5.0

    thrust = logs["nmpc"].thrust_cmd
    limits = params.limits
    assert thrust.max() >= limits.thrust_max - 1e-6 or thrust.min() <= limits.thrust_min + 1e-6
