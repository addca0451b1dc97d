"""``fris-ce`` command line entry point.

Exit codes: 0 success, 1 runtime error, 2 configuration error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

from fris_ce.harness import emit_csv, emit_plot_script, load_config, run_experiment
from fris_ce.model import ConfigError

log = logging.getLogger("fris_ce")

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    name = os.environ.get("FRIS_CE_LOG", "warn").strip().lower()
    level = LOG_LEVELS.get(name, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if name not in LOG_LEVELS:
        log.warning("ignoring unknown FRIS_CE_LOG=%r", name)


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in an unsigned 64-bit integer: {text}")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fris-ce", description="FRIS uplink channel estimation sweeps")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a Monte-Carlo sweep")
    run.add_argument("--config", required=True, help="JSON experiment config")
    run.add_argument("--seed", type=_u64, help="override system.seed")
    run.add_argument("--out", help="override output_path (CSV)")
    run.add_argument("--plot", help="write a gnuplot script here")
    run.add_argument("--threads", type=_positive, default=1, help="worker threads (default 1)")

    val = sub.add_parser("validate", help="check a config file and exit")
    val.add_argument("--config", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging()
    try:
        cfg = load_config(args.config)
        if args.command == "validate":
            print(f"{args.config}: ok ({len(cfg.sweep_values)} sweep points x "
                  f"{cfg.system.trials} trials x {len(cfg.estimators)} estimators)")
            return 0
        if args.seed is not None:
            cfg = replace(cfg, system=replace(cfg.system, seed=args.seed))
        if args.out:
            cfg = replace(cfg, output_path=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        rows = run_experiment(cfg, threads=args.threads)
        csv_path = emit_csv(rows, cfg.output_path)
        print(f"wrote {len(rows)} rows to {csv_path}")
        if args.plot:
            emit_plot_script(rows, args.plot, csv_path=csv_path)
            print(f"wrote plot script {args.plot}")
    except Exception as exc:  # noqa: BLE001
        log.debug("run failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
