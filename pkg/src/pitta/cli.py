"""Command line entry point: run, validate, oracle, version.

Exit status is 0 on success, 1 on a usage or config error and 2 when a run
fails at runtime.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from . import __version__
from .oracles import ORACLES, run_oracle
from .runner import ConfigError, load_config, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pitta", description="Physics-informed test-time adaptation lab.")
    parser.add_argument("--quiet", action="store_true", help="only print errors")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config")
    run.add_argument("--out-dir", default=None, help="overrides PITTA_OUT and the config")
    run.add_argument("--seed-override", type=int, default=None, help="run this single seed")
    run.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("config")
    val.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    orc = sub.add_parser("oracle", help="print a brute-force oracle value")
    orc.add_argument("name", help=", ".join(sorted(ORACLES)))
    sub.add_parser("version", help="print the package version")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    say = (lambda *a: None) if args.quiet else print

    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    if args.command == "version":
        print(__version__)
        return EXIT_OK
    if args.command == "oracle":
        if args.name not in ORACLES:
            print(f"unknown oracle {args.name!r}; choose from {', '.join(sorted(ORACLES))}", file=sys.stderr)
            return EXIT_CONFIG
        print(repr(run_oracle(args.name)))
        return EXIT_OK

    try:
        cfg = load_config(args.config)
        if getattr(args, "seed_override", None) is not None:
            cfg = replace(cfg, seeds=(args.seed_override,))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        say(f"{args.config}: ok ({cfg.protocol}, {len(cfg.seeds)} seeds, methods {', '.join(cfg.methods)})")
        return EXIT_OK

    try:
        report = run_experiment(cfg, args.out_dir)
    except Exception as exc:  # noqa: BLE001 - surfaced as exit status 2
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if report["partial"]:
        print(f"some seeds failed: {json.dumps(report['errors'])}", file=sys.stderr)
        return EXIT_RUNTIME
    for key, agg in report["aggregate"].items():
        parts = [f"{m}={agg[m]['mean']:.4f}+-{agg[m]['std']:.4f}" for m in ("online_acc", "vr", "heldout_final")
                 if m in agg]
        say(f"{key}: " + " ".join(parts))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
