"""command-line front end: `run` one scenario, `suite` of scenarios, `metrics` from a saved log"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

from .config import CONTROLLERS, PRESETS, SCHEMA_VERSION, ScenarioConfig, default_suite, load_config, load_suite
from .exceptions import MavBenchException
from .metrics import DEFAULT_TRANSIENT, compute_metrics, dumps
from .orchestrator import DEFAULT_MAX_WORKERS, SuiteResult, run_suite, write_outputs
from .simulator import SimLog

logger = logging.getLogger(__name__)


def _error_json(e: MavBenchException) -> str:
    return json.dumps({"error": type(e).__name__, "message": e.message}, sort_keys=True)


def _apply_flags(configs: list[ScenarioConfig], args: argparse.Namespace) -> list[ScenarioConfig]:
    overrides: dict[str, object] = {}
    if args.seed is not None:
        overrides["simulation.seed"] = args.seed
    if args.controller is not None:
        overrides["controller"] = args.controller
    if not overrides:
        return configs
    return [cfg.with_overrides(**overrides) for cfg in configs]


def _finish(result: SuiteResult, out_dir: Path | None) -> int:
    if out_dir is not None:
        write_outputs(result, out_dir)
    sys.stdout.write(result.table())
    for (scenario, controller), message in sorted(result.errors.items()):
        sys.stderr.write(
            json.dumps({"error": "SimulationError", "message": message, "run": f"{scenario}/{controller}"}) + "\n"
        )
    return 1 if result.errors else 0


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config) if args.config else ScenarioConfig.from_dict({"schema_version": SCHEMA_VERSION})
    configs = _apply_flags([cfg], args)
    return _finish(run_suite(configs, max_workers=args.workers), args.out_dir)


def cmd_suite(args: argparse.Namespace) -> int:
    configs = load_suite(args.config) if args.config else default_suite()
    configs = _apply_flags(configs, args)
    logger.info(f"running suite of {len(configs)} scenarios: {', '.join(c.name for c in configs)}")
    return _finish(run_suite(configs, max_workers=args.workers), args.out_dir)


def cmd_metrics(args: argparse.Namespace) -> int:
    log_path = Path(args.log)
    timing = Path(args.timing) if args.timing else log_path.with_name("timing.csv")
    log = SimLog.from_csv(log_path, timing, scenario=args.scenario, controller=args.controller or "")
    report = compute_metrics(log, args.kind, args.transient)
    sys.stdout.write(dumps(report))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mavbench", description="closed-loop LMPC/NMPC multirotor benchmark")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, func, help_text in (
        ("run", cmd_run, "run one scenario"),
        ("suite", cmd_suite, "run a suite of scenarios (default: hover in wind, step, figure-eight)"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="scenario (run) or suite (suite) JSON file")
        p.add_argument("--out-dir", type=Path, help="write logs and reports here")
        p.add_argument("--seed", type=int)
        p.add_argument("--controller", choices=CONTROLLERS)
        p.add_argument("--workers", type=int, default=DEFAULT_MAX_WORKERS, help="parallel runs")
        p.set_defaults(func=func)

    p = sub.add_parser("metrics", help="recompute metrics from a saved log.csv")
    p.add_argument("log", help="log.csv written by run or suite")
    p.add_argument("--timing", help="timing.csv (default: next to the log)")
    p.add_argument("--kind", choices=PRESETS, default="hover")
    p.add_argument("--transient", type=float, default=DEFAULT_TRANSIENT)
    p.add_argument("--scenario", default="")
    p.add_argument("--controller", default=None)
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return int(args.func(args))
    except MavBenchException as e:
        logger.error(f"{args.command} failed: {e.message}")
        sys.stderr.write(_error_json(e) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
