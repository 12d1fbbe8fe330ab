"""Command line entry point: ``jsdetect {run,grid,validate,plot}``.

Exit codes: 0 success, 1 configuration (or file) error, 2 numerical failure,
3 validation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from jsdetect import harness, validation
from jsdetect.config import ConfigError, load_config
from jsdetect.linsys import ConvergenceError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VALIDATION = 0, 1, 2, 3


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jsdetect", description="Joint-statistics attack detection experiments.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (YAML)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--seed-plant", type=_u64)
    common.add_argument("--seed-attack", type=_u64)
    common.add_argument("--seed-lloyd", type=_u64)
    common.add_argument("--quiet", action="store_true", help="only print errors")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="simulate, attack, detect; write CSV traces and summary.json")
    sub.add_parser("grid", parents=[common], help="build or load the cached Lloyd grids of a config")
    sub.add_parser("validate", parents=[common], help="run the statistical self-checks")
    p = sub.add_parser("plot", parents=[common], help="render one PNG per trace CSV")
    p.add_argument("--traces", help="directory holding the CSVs (default: the config's output)")
    return parser


def _load(args, required=True):
    if args.config is None:
        if required:
            raise ConfigError("--config is required for this command", "<cli>")
        return None
    cfg = load_config(args.config)
    return cfg.with_overrides(args.out, args.seed_plant, args.seed_attack, args.seed_lloyd)


def _emit(args, obj) -> None:
    if not args.quiet:
        print(json.dumps(obj, sort_keys=True))


def cmd_run(args) -> int:
    cfg = _load(args)
    result = harness.run_experiment(cfg)
    _emit(args, result.summary)
    return EXIT_OK


def cmd_grid(args) -> int:
    cfg = _load(args)
    for report in harness.build_grids(cfg):
        _emit(args, report)
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _load(args, required=False)
    model = None if cfg is None else cfg.model
    seed = args.seed_plant if args.seed_plant is not None else (0 if cfg is None else cfg.seeds.plant)
    results = validation.run_checks(model, seed=seed)
    for r in results:
        _emit(args, r.as_dict())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"validation failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_plot(args) -> int:
    if args.traces is None:
        cfg = _load(args)
        traces = cfg.output
    else:
        traces = args.traces
    for path in harness.plot_traces(traces, args.out if args.traces else None):
        _emit(args, {"image": str(path)})
    return EXIT_OK


COMMANDS = {"run": cmd_run, "grid": cmd_grid, "validate": cmd_validate, "plot": cmd_plot}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
