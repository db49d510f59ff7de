"""Command-line front end: simulate, bounds, lqr-check, list-builtin."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .scenario import (
    BUILTIN_SCENARIOS,
    ErrorCode,
    RunReport,
    ScenarioError,
    apply_overrides,
    bounds_command,
    lqr_check_command,
    parse_scenario_dict,
    run_scenario,
)

SEED_ENV_VAR = "SWLQR_SEED"


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--seed", type=int, default=None,
        help=f"override the scenario seed (falls back to ${SEED_ENV_VAR})",
    )
    parser.add_argument("--output", default=None, help="directory for trace/report files")
    parser.add_argument(
        "--format", choices=("csv", "json"), default="csv", help="trace file format"
    )
    parser.add_argument(
        "--override", action="append", default=[], metavar="KEY=VALUE",
        help="dotted-path override applied to the raw scenario, e.g. "
             "delta=0.002 or schedule.dwell=20 (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swlqr",
        description="Online data-driven LQR control of unknown switched linear systems",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run the closed loop and write traces")
    p_sim.add_argument("scenarios", nargs="+", help="builtin names or JSON paths")
    _add_common_flags(p_sim)
    p_sim.add_argument(
        "--no-bounds", action="store_true", help="skip the stability-bounds section"
    )

    p_bounds = sub.add_parser("bounds", help="report the stability certificates")
    p_bounds.add_argument("scenario", help="builtin name or JSON path")
    _add_common_flags(p_bounds)
    p_bounds.add_argument(
        "--decay-rate", type=float, default=None,
        help="per-interval decay rate (must lie strictly between alpha and 1)",
    )

    p_check = sub.add_parser(
        "lqr-check", help="compare the data-driven gain with the model-based optimum"
    )
    p_check.add_argument("scenario", help="builtin name or JSON path (single mode)")
    _add_common_flags(p_check)
    p_check.add_argument("--tolerance", type=float, default=1e-4)

    sub.add_parser("list-builtin", help="list builtin scenario names")
    return parser


def _load_config(name_or_path: str, args: argparse.Namespace):
    overrides = {}
    for item in args.override:
        if "=" not in item:
            raise ScenarioError(
                f"override '{item}' is not KEY=VALUE", ErrorCode.SCHEMA
            )
        key, _, value = item.partition("=")
        overrides[key] = value

    seed = args.seed
    if seed is None and os.environ.get(SEED_ENV_VAR):
        seed = int(os.environ[SEED_ENV_VAR])
    if seed is not None:
        overrides["seed"] = str(seed)

    if name_or_path in BUILTIN_SCENARIOS:
        raw = BUILTIN_SCENARIOS[name_or_path]()
    else:
        path = Path(name_or_path)
        if not path.exists():
            raise ScenarioError(
                f"no builtin or file named '{name_or_path}'", ErrorCode.SCHEMA
            )
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"invalid JSON in {path}: {exc}", ErrorCode.SCHEMA)
    if overrides:
        raw = apply_overrides(raw, overrides)
    name = raw.get("name") or Path(name_or_path).stem
    return parse_scenario_dict(raw, name=name)


def _emit(report: RunReport, args: argparse.Namespace) -> None:
    sys.stdout.write(report.render_text())
    out_dir = args.output
    if out_dir is not None:
        path = Path(out_dir) / f"{report.scenario}-{report.command}-report.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "list-builtin":
            for name in sorted(BUILTIN_SCENARIOS):
                print(name)
            return int(ErrorCode.OK)

        if args.command == "simulate":
            worst = ErrorCode.OK
            for target in args.scenarios:
                config = _load_config(target, args)
                report = run_scenario(
                    config,
                    output_dir=args.output,
                    fmt=args.format,
                    compute_bounds=not args.no_bounds,
                )
                _emit(report, args)
                if report.error is not None:
                    worst = max(worst, ErrorCode.SIMULATION)
                elif not report.invariants_ok:
                    worst = max(worst, ErrorCode.INVARIANT)
            return int(worst)

        if args.command == "bounds":
            config = _load_config(args.scenario, args)
            report = bounds_command(config, lam=args.decay_rate)
            _emit(report, args)
            return int(ErrorCode.OK if report.invariants_ok else ErrorCode.PARAMETER)

        if args.command == "lqr-check":
            config = _load_config(args.scenario, args)
            report = lqr_check_command(config, tolerance=args.tolerance)
            _emit(report, args)
            return int(ErrorCode.OK if report.invariants_ok else ErrorCode.DISCREPANCY)

    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return int(exc.code)
    return int(ErrorCode.UNEXPECTED)


if __name__ == "__main__":
    raise SystemExit(main())
