"""Command-line entry point: ``dkgm run|validate|seed-report <config>``.

Exit codes: 0 success, 2 configuration parse error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from . import experiments
from .config import load_config
from .errors import ConfigError, NumericError

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_NUMERIC = 3


def _seed(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dkgm", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="path to a run configuration file")
    common.add_argument("--seed", type=_seed, help="override the master seed")
    common.add_argument("--out", help="override the output directory")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="execute the configured experiment")
    sub.add_parser("validate", parents=[common], help="parse and check a config")
    sub.add_parser("seed-report", parents=[common], help="print the derived stream seeds")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    say = (lambda msg: None) if args.quiet else (lambda msg: print(msg, file=sys.stderr))
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"{args.config}: parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"{args.config}: {exc.strerror}", file=sys.stderr)
        return EXIT_PARSE
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = dataclasses.replace(cfg, output_dir=args.out)

    if args.command == "validate":
        if not args.quiet:
            print(f"{args.config}: ok ({cfg.experiment}, seed {cfg.seed})")
        return EXIT_OK
    if args.command == "seed-report":
        print("stream,index,seed")
        for name, idx, seed in experiments.seed_report(cfg):
            print(f"{name},{idx},{seed}")
        return EXIT_OK

    try:
        report = experiments.run(cfg, log=say)
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if not args.quiet:
        for key, value in report.summary.items():
            print(f"{key} = {value!r}")
        print(f"wrote {len(report.files)} files to {report.output_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
