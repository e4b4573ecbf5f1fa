"""Command line entry point.

Every subcommand takes ``--config <yaml>`` and ``--out <dir>``; the exit
code is 0 only when no module-level error occurred.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import NonadiabaticError
from .harness import (
    STAGES,
    emit_figure_data,
    load_config,
    parse_seed_range,
    run_renorm,
    run_stage,
)

COMMANDS = ("run", "branchpoints", "stokes", "sequences", "propagate", "renorm", "figures")


def build_parser():
    p = argparse.ArgumentParser(prog="nonadiabatic", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="YAML experiment config")
        s.add_argument("--out", help="output directory (overrides the config)")
        s.add_argument("--seed-range", help="inclusive GOE seed range 'a..b'")
        if name == "figures":
            s.add_argument("--which", choices=("levels", "diagram", "all"), default="all")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {"output": args.out}
    try:
        config = load_config(args.config, overrides)
        if args.seed_range:
            config.model["seeds"] = parse_seed_range(args.seed_range)
        out = args.out or config.output
        if args.command == "figures":
            emit_figure_data(out, args.which, seeds=config.seeds)
            return 0
        if args.command == "renorm":
            errors = run_renorm(config, out)
        else:
            assert args.command in STAGES
            errors = run_stage(config, args.command, out)
    except NonadiabaticError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if errors:
        print(f"{errors} module-level error(s); see the log and exclusions.csv",
              file=sys.stderr)
        return 1
    return 0
