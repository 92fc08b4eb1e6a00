"""Command line entry point: ``pmorder run | list-kinds | validate``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .experiments import ConfigError, ExperimentError, list_kinds, load_config, run_experiment

EXIT_OK = 0
EXIT_VERDICT_FAILED = 1
EXIT_BAD_CONFIG = 2
EXIT_RUNTIME = 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pmorder", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment and write report.json plus tables/*.csv")
    run.add_argument("config", type=Path)
    run.add_argument("--out", type=Path, default=None, help="output directory (default: config output.dir or ./out)")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--threads", type=int, default=1, help="worker threads for independent sweep instances")

    sub.add_parser("list-kinds", help="print the available experiment kinds")

    val = sub.add_parser("validate", help="check a config against the schema")
    val.add_argument("config", type=Path)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    if args.command == "list-kinds":
        for kind in list_kinds():
            print(kind)
        return EXIT_OK

    try:
        config = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG

    if args.command == "validate":
        print(f"{args.config}: ok ({config['kind']})")
        return EXIT_OK

    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be a 64-bit unsigned integer", file=sys.stderr)
        return EXIT_BAD_CONFIG
    try:
        report = run_experiment(config, seed=args.seed, threads=args.threads)
    except ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    out = args.out or Path(config.get("output", {}).get("dir", "out"))
    report.write(out)
    for v in report.verdicts:
        tag = "PASS" if v.passed else "FAIL"
        if not v.asserted:
            tag = "NOTE"
        print(f"[{tag}] {v.name}: value={v.value} target={v.target} tol={v.tol}")
    print(f"report written to {out / 'report.json'}")
    return EXIT_OK if report.passed else EXIT_VERDICT_FAILED


if __name__ == "__main__":
    sys.exit(main())
