"""Command line entry point: ``coupledpf run | summarize | bounds``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

import yaml

from . import bounds as _bounds
from .errors import ConfigError, InvalidParameterError
from .harness import (
    SweepConfig,
    read_records,
    resolve_output,
    run_config,
    summarize,
    write_summary,
)


def _options(parser, prefix=""):
    parser.add_argument("--threads", dest=prefix + "threads", type=int, default=None,
                        help="worker threads for replicates")
    parser.add_argument("--seed", dest=prefix + "seed", type=int, default=None, help="override the base seed")
    parser.add_argument("-v", "--verbose", dest=prefix + "verbose", action="store_true")


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    _options(common)
    p = argparse.ArgumentParser(prog="coupledpf", description="Coupled conditional particle filter experiments.")
    _options(p, "top_")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="run a coupling-time sweep")
    run.add_argument("--config", required=True, help="YAML sweep configuration")
    run.add_argument("--output", default=None, help="CSV path (overrides the config)")

    summ = sub.add_parser("summarize", parents=[common], help="summarise a sweep CSV per cell")
    summ.add_argument("--input", required=True)
    summ.add_argument("--output", required=True)

    bnd = sub.add_parser("bounds", parents=[common], help="evaluate theoretical bounds")
    bnd.add_argument("--params", required=True,
                     help="YAML list of mappings, each with a 'bound' name and its parameters")
    bnd.add_argument("--output", default="bounds.csv")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    # options after the subcommand take precedence over those before it
    threads = args.threads if args.threads is not None else (args.top_threads or 1)
    seed = args.seed if args.seed is not None else args.top_seed
    logging.basicConfig(level=logging.INFO if (args.verbose or args.top_verbose) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            cfg = SweepConfig.load(args.config)
            if seed is not None:
                cfg = dataclasses.replace(cfg, seed=seed)
            out = run_config(cfg, threads=threads, output=args.output)
            print(out)
        elif args.command == "summarize":
            out = write_summary(summarize(read_records(args.input)), resolve_output(args.output))
            print(out)
        elif args.command == "bounds":
            with open(args.params) as fh:
                specs = yaml.safe_load(fh)
            if isinstance(specs, dict):
                specs = specs.get("bounds", [specs])
            values = [v for spec in specs for v in _bounds.evaluate_bound(spec)]
            print(_bounds.write_bounds_csv(values, resolve_output(args.output)))
    except (ConfigError, InvalidParameterError, OSError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
