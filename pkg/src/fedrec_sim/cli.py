"""Command line entry point: ``run`` a single experiment or ``sweep`` one axis."""

from __future__ import annotations

import argparse
import logging
import sys

from .harness import ConfigError, emit_results, emit_series, parse_config, run_experiment, run_grid


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedrec-sim", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--out", required=True, help="result table path")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--series", help="also write per-evaluation metrics as JSON lines")

    common(sub.add_parser("run", help="run one experiment"))
    sweep = sub.add_parser("sweep", help="run one experiment per value of a config key")
    common(sweep)
    sweep.add_argument("--axis", required=True, metavar="KEY=V1,V2,...")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = parse_config(args.config, args.set)
        if not cfg.dataset:
            raise ConfigError("no dataset given (set dataset=<path>)")
        if args.command == "run":
            results = [run_experiment(cfg)]
        else:
            results = run_grid(cfg, args.axis)
        emit_results([r.row for r in results], args.format, args.out)
        if args.series:
            emit_series(results, args.series)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
