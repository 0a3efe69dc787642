from __future__ import annotations

import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from threading import Lock
from typing import Any, TypedDict

from .config import SCHEMA_VERSION, ScenarioConfig
from .event_logger import EventLogger, event_logger
from .exceptions import ConfigError, MetricsError, SimulationError
from .metrics import MetricsReport, compute_metrics, dumps, split_timing
from .simulator import SimLog, run_scenario

logger = logging.getLogger(__name__)

RunStatus = dict[str, str | None]

DEFAULT_MAX_WORKERS = 4


class ScenarioEntry(TypedDict):
    scenario: str
    kind: str
    controllers: dict[str, dict[str, Any]]
    nmpc_faster: bool | None


@dataclass
class SuiteResult:
    report: dict[str, Any]
    timing: dict[str, dict[str, float]]
    logs: dict[tuple[str, str], SimLog] = field(default_factory=dict)
    errors: dict[tuple[str, str], str] = field(default_factory=dict)

    def table(self) -> str:
        return format_table(self.report, self.timing)


def check_pairs(configs: list[ScenarioConfig]) -> None:
    """scenarios sharing a name are one comparison: disjoint controllers, identical weights"""
    by_name: defaultdict[str, list[ScenarioConfig]] = defaultdict(list)
    for cfg in configs:
        by_name[cfg.name].append(cfg)
    for name, group in by_name.items():
        seen: set[str] = set()
        for cfg in group:
            ctrls = set(cfg.controllers())
            if seen & ctrls:
                raise ConfigError(f"scenario {name} runs {sorted(seen & ctrls)} more than once")
            seen |= ctrls
        reference = group[0].ocp_config()
        for cfg in group[1:]:
            if not reference.same_weights(cfg.ocp_config()):
                raise ConfigError(f"scenario {name}: controller pair has mismatched cost weights or horizon")


class Orchestrator:
    """runs every (scenario, controller) job of a suite in a thread pool and merges the results by name"""

    def __init__(
        self,
        configs: list[ScenarioConfig],
        max_workers: int = DEFAULT_MAX_WORKERS,
        events: EventLogger | None = None,
    ) -> None:
        if not configs:
            raise ConfigError("suite has no scenarios")
        check_pairs(configs)
        self.configs = configs
        self.max_workers = max_workers
        self.events = events if events is not None else event_logger
        self.status: dict[str, str] = {}
        self.lock = Lock()

    def _jobs(self) -> list[tuple[ScenarioConfig, str]]:
        return [(cfg, ctrl) for cfg in self.configs for ctrl in cfg.controllers()]

    def _set_status(self, key: str, status: str) -> None:
        with self.lock:
            self.status[key] = status
            logger.debug(f"{key}: {status}")

    def _run_one(self, cfg: ScenarioConfig, controller: str) -> SimLog:
        key = f"{cfg.name}/{controller}"
        self._set_status(key, "running")
        try:
            log = run_scenario(cfg, controller)
        except SimulationError:
            self._set_status(key, "aborted")
            raise
        self._set_status(key, "done")
        return log

    def get_status(self) -> list[RunStatus]:
        with self.lock:
            return [{"run": key, "status": status} for key, status in sorted(self.status.items())]

    def run(self) -> SuiteResult:
        jobs = self._jobs()
        for cfg, ctrl in jobs:
            self._set_status(f"{cfg.name}/{ctrl}", "pending")
        self.events.log_event("suite_started", f"{len(jobs)} runs over {len(self.configs)} scenarios")

        logs: dict[tuple[str, str], SimLog] = {}
        errors: dict[tuple[str, str], str] = {}
        with ThreadPoolExecutor(max_workers=max(1, min(self.max_workers, len(jobs)))) as pool:
            futures = {pool.submit(self._run_one, cfg, ctrl): (cfg.name, ctrl) for cfg, ctrl in jobs}
            for future in as_completed(futures):
                key = futures[future]
                try:
                    logs[key] = future.result()
                except SimulationError as e:
                    errors[key] = e.message
                    if e.log is not None:
                        logs[key] = e.log
                    logger.warning(f"run {key[0]}/{key[1]} aborted: {e.message}")

        result = self._assemble(logs, errors)
        self.events.log_event(
            "suite_finished",
            f"{len(jobs) - len(errors)} runs finished, {len(errors)} aborted",
            level="warning" if errors else "info",
        )
        return result

    def _assemble(self, logs: dict[tuple[str, str], SimLog], errors: dict[tuple[str, str], str]) -> SuiteResult:
        # single-writer merge, ordered by scenario name then controller
        entries: dict[str, ScenarioEntry] = {}
        timing: dict[str, dict[str, float]] = {}
        for cfg in sorted(self.configs, key=lambda c: c.name):
            entry = entries.setdefault(
                cfg.name, {"scenario": cfg.name, "kind": cfg.kind, "controllers": {}, "nmpc_faster": None}
            )
            for ctrl in cfg.controllers():
                key = (cfg.name, ctrl)
                if key in errors:
                    entry["controllers"][ctrl] = {"error": errors[key]}
                    continue
                try:
                    report: MetricsReport = compute_metrics(logs[key], cfg.kind, cfg.transient)
                except MetricsError as e:
                    logger.warning(f"run {cfg.name}/{ctrl} has no metrics: {e.message}")
                    errors[key] = e.message
                    entry["controllers"][ctrl] = {"error": e.message}
                    continue
                det, times = split_timing(report)
                entry["controllers"][ctrl] = det
                timing[f"{cfg.name}/{ctrl}"] = times

        for entry in entries.values():
            ctrls = entry["controllers"]
            if entry["kind"] != "step" or "lmpc" not in ctrls or "nmpc" not in ctrls:
                continue
            rise_l = ctrls["lmpc"].get("rise_time_s")
            rise_n = ctrls["nmpc"].get("rise_time_s")
            if rise_l is not None and rise_n is not None:
                entry["nmpc_faster"] = bool(rise_n < rise_l)

        report = {"schema_version": SCHEMA_VERSION, "scenarios": [entries[name] for name in sorted(entries)]}
        return SuiteResult(report=report, timing=dict(sorted(timing.items())), logs=logs, errors=errors)


def write_outputs(result: SuiteResult, out_dir: Path) -> None:
    """per-run log.csv, timing.csv, metrics.json, events.json, plus suite report.json, timing.json, report.txt"""
    out_dir.mkdir(parents=True, exist_ok=True)
    for (scenario, controller), log in sorted(result.logs.items()):
        run_dir = out_dir / scenario / controller
        run_dir.mkdir(parents=True, exist_ok=True)
        log.to_csv(run_dir / "log.csv")
        log.timing_to_csv(run_dir / "timing.csv")
        (run_dir / "events.json").write_text(dumps(log.events))
        for entry in result.report["scenarios"]:
            if entry["scenario"] == scenario:
                (run_dir / "metrics.json").write_text(dumps(entry["controllers"].get(controller, {})))
    (out_dir / "report.json").write_text(dumps(result.report))
    (out_dir / "timing.json").write_text(dumps(result.timing))
    (out_dir / "report.txt").write_text(result.table())
    logger.info(f"wrote suite outputs to {out_dir}")


def _fmt(value: Any, spec: str = ".3f") -> str:
    if value is None:
        return "-"
    return format(value, spec)


def format_table(report: dict[str, Any], timing: dict[str, dict[str, float]]) -> str:
    header = (
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
    )
    rows: list[tuple[str, ...]] = [header]
    for entry in report["scenarios"]:
        for ctrl, m in sorted(entry["controllers"].items()):
            if "error" in m:
                rows.append((entry["scenario"], ctrl, "aborted", *[""] * (len(header) - 3)))
                continue
            t = timing.get(f"{entry['scenario']}/{ctrl}", {})
            rows.append(
                (
                    entry["scenario"],
                    ctrl,
                    *[_fmt(v) for v in m["rmse_cm"]],
                    _fmt(m["rmse_total_cm"]),
                    _fmt(m["rise_time_s"]),
                    _fmt(m["overshoot_pct"], ".2f"),
                    _fmt(t.get("solve_time_mean_ms")),
                    _fmt(t.get("solve_time_max_ms")),
                    str(m["faults"]),
                )
            )
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = [
        "  ".join(cell.ljust(w) if i < 2 else cell.rjust(w) for i, (cell, w) in enumerate(zip(r, widths)))
        for r in rows
    ]
    return "\n".join(line.rstrip() for line in lines) + "\n"


def run_suite(configs: list[ScenarioConfig], max_workers: int = DEFAULT_MAX_WORKERS) -> SuiteResult:
    return Orchestrator(configs, max_workers=max_workers).run()
