"""Command line entry point.

    osc-ensemble run <config> [--grid N] [--dt DT] [--seed S] [--out DIR]
    osc-ensemble design <config> ...
    osc-ensemble reduce <config> ...
    osc-ensemble report <dir> [<dir> ...]
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, ScenarioConfig
from .runner import ScenarioError, compare_report, design_only, format_report, reduce_only, run_scenario


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="osc-ensemble", description="Oscillator ensemble control scenarios")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "design", "reduce"):
        p = sub.add_parser(name)
        p.add_argument("config", nargs="?", help="YAML config (defaults if omitted)")
        p.add_argument("--grid", type=int)
        p.add_argument("--dt", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
    rep = sub.add_parser("report")
    rep.add_argument("dirs", nargs="+")
    rep.add_argument("--json", action="store_true", help="print the report as JSON")
    return parser


def _error(payload: dict, out: str | None) -> int:
    text = json.dumps(payload, indent=1)
    print(text, file=sys.stderr)
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "error.json").write_text(text)
    return 2


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "report":
        try:
            report = compare_report(args.dirs)
        except (OSError, ValueError, KeyError) as exc:
            return _error({"stage": "report", "error": type(exc).__name__, "message": str(exc)}, None)
        print(json.dumps(report, indent=1) if args.json else format_report(report))
        return 0
    try:
        cfg = ScenarioConfig.load(args.config).with_overrides(args.grid, args.dt, args.seed, args.out)
    except (ConfigError, OSError, ValueError) as exc:
        return _error({"stage": "config", "error": type(exc).__name__, "message": str(exc)}, args.out)
    try:
        if args.command == "run":
            result = run_scenario(cfg)
        elif args.command == "design":
            result = design_only(cfg)
        else:
            result = reduce_only(cfg)
    except ScenarioError as exc:
        if args.command != "run":
            _error({"stage": exc.stage, "error": type(exc.cause).__name__, "message": str(exc.cause)}, cfg.out)
        else:
            print(f"scenario failed in {exc.stage}: {exc.cause}", file=sys.stderr)
        return 1
    print(json.dumps(result, indent=1, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
