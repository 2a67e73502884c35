"""Command-line entry point: ``subsaf run | design-bank | channels list``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import bench, filterbank

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _run(args):
    try:
        cfg = bench.load_config(args.config, seed=args.seed, runs=args.runs, output=args.out)
    except bench.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if cfg.output is None:
        print("config error: no output path (set [experiment] output or pass --out)", file=sys.stderr)
        return EXIT_CONFIG
    try:
        series = bench.run_experiment(cfg)
    except bench.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeError, ValueError, OSError, FloatingPointError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    tail = series.msd_db[-min(5000, series.msd_db.size):]
    print(f"wrote {cfg.output}: {series.msd_db.size} samples, final-5000 MSD {tail.mean():.2f} dB")
    return EXIT_OK


def _design_bank(args):
    try:
        proto = filterbank.design_prototype(args.subbands, args.length, args.atten)
    except filterbank.DesignError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        filterbank.save_prototype(proto, args.out)
    except OSError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {args.out}: J={proto.length}, stopband {proto.stopband_atten_db:.1f} dB")
    return EXIT_OK


def _channels(args):
    for name in bench.BUILTIN_CHANNELS:
        h = bench.builtin_channels(name)
        print(f"{name}\t{h.size} taps")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="subsaf", description="Robust subband adaptive filtering simulations")
    ap.add_argument("-v", "--verbose", action="store_true", help="log per-run progress")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config and write its CSV trace")
    run.add_argument("config")
    run.add_argument("--seed", type=int)
    run.add_argument("--runs", type=int)
    run.add_argument("--out")
    run.set_defaults(func=_run)

    db = sub.add_parser("design-bank", help="design a prototype low-pass filter")
    db.add_argument("--subbands", type=int, required=True)
    db.add_argument("--length", type=int, required=True)
    db.add_argument("--atten", type=float, default=60.0)
    db.add_argument("--out", required=True)
    db.set_defaults(func=_design_bank)

    ch = sub.add_parser("channels", help="builtin echo paths")
    ch.add_argument("action", choices=["list"])
    ch.set_defaults(func=_channels)
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        # argparse usage errors count as configuration errors
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
