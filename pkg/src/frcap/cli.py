"""``frcap <subcommand> --config <file> [--set key=value]...``

Exit status: 0 on success, 1 when the configuration is invalid, 2 when a
run fails (including failed sweep points or verification checks).
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config

SUBCOMMANDS = ("train", "norms", "verify", "rademacher", "margins", "sweep", "conditioning")

EXIT_OK, EXIT_CONFIG, EXIT_RUN = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="frcap",
                                 description="Fisher-Rao norm and capacity experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file (defaults are used without one)")
        sp.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config leaf by dotted path")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.overrides, experiment=args.command)
    except ConfigError as exc:
        print(f"frcap: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    from .experiments import run_experiment

    try:
        result = run_experiment(cfg)
    except ConfigError as exc:
        print(f"frcap: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"frcap: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUN
    for path in result.files:
        print(path)
    if not result.ok:
        print(f"frcap: {len(result.failures)} failure(s), see reports", file=sys.stderr)
        return EXIT_RUN
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
