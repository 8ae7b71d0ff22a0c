"""Command-line entry point.

Exit status: 0 when every check passes, 1 on a numeric failure (a failed check
or a numeric error), 2 on a configuration error.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, ExperimentConfig, load_config
from .errors import CesBoundError
from .harness import render, run_experiment, sweep

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _samples(text: str) -> int:
    value = int(text)
    if value < 1000:
        raise argparse.ArgumentTypeError("at least 1000 samples are required")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML or JSON experiment file")
    common.add_argument("--seed", type=_u64, help="override the configured seed")
    common.add_argument("--samples", type=_samples, metavar="N", help="override the Monte Carlo sample count")
    common.add_argument("--out", metavar="PATH", help="write the output here instead of stdout")
    common.add_argument("--format", choices=["csv", "report"], help="csv table or JSON report")
    common.add_argument("--workers", type=int, help="worker threads for Monte Carlo batches and grid points")

    parser = argparse.ArgumentParser(prog="cesbound", description="Fisher information and CRBs for CES models.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("xi", parents=[common], help="moment coefficients of a density generator")
    sub.add_parser("fim", parents=[common], help="analytic FIM against its Monte Carlo oracle")
    scrb = sub.add_parser("scrb", parents=[common], help="stochastic CRB on directions of arrival")
    mode = scrb.add_mutually_exclusive_group()
    mode.add_argument("--circular", dest="circular", action="store_true", default=None)
    mode.add_argument("--noncircular", dest="circular", action="store_false")
    sub.add_parser("sweep", parents=[common], help="run the configured experiment over its sweep grid")
    sub.add_parser("validate", parents=[common], help="invariant suite of every module")
    return parser


def resolve_config(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    elif args.command == "validate":
        cfg = ExperimentConfig(kind="validate", seed=0)
    else:
        raise ConfigError(f"{args.command} needs --config")
    if args.command in ("xi", "fim", "scrb", "validate") and cfg.kind != args.command:
        raise ConfigError(f"configuration is a {cfg.kind!r} experiment, not {args.command!r}", ("kind",))
    if args.command == "sweep" and not cfg.sweep:
        raise ConfigError("sweep needs a non-empty grid", ("sweep",))
    if args.seed is not None:
        cfg.seed = args.seed
    if args.samples is not None:
        cfg.samples = args.samples
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("workers must be positive")
        cfg.workers = args.workers
    if args.format is not None:
        cfg.output_format = args.format
    if args.out is not None:
        cfg.output_path = args.out
    if getattr(args, "circular", None) is not None:
        cfg.model["circular"] = args.circular
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_PASS
    try:
        cfg = resolve_config(args)
        if args.command == "sweep":
            result = sweep(cfg)
            points, axes, passed = result.points, result.axes, result.passed
        else:
            report = run_experiment(cfg)
            points, axes, passed = [({}, report)], [], report.passed
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CesBoundError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    if not cfg.output_path:
        sys.stdout.write(render(cfg, points, axes))
    failed = sum(not r.passed for _, rep in points for r in rep.records)
    print(f"{'PASS' if passed else 'FAIL'}: {failed} failed check(s)", file=sys.stderr)
    return EXIT_PASS if passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
