"""Command-line entry point: one subcommand per experiment.

Exit codes: 0 all asserted invariants passed, 1 an assertion failed,
2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigurationError, NumericalError, PreconditionError, SolvabilityError
from .experiments import EXPERIMENTS, load_config, load_preset, run

log = logging.getLogger("rungelab")

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rungelab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="JSON config file (defaults to the bundled preset)")
        p.add_argument("--out", default="out", help="output directory for CSV/JSON (default: %(default)s)")
        p.add_argument("--grid", type=int, help="override geometry.N")
        p.add_argument("--seed", type=int, help="override the random seed")
        p.add_argument("--threads", type=int, help="worker threads for column solves")
    return parser


def _config_from_args(args) -> dict:
    cfg = load_config(args.config) if args.config else load_preset(args.experiment)
    if cfg.get("experiment", args.experiment) != args.experiment:
        raise ConfigurationError(
            f"experiment: config declares {cfg['experiment']!r} but subcommand is {args.experiment!r}"
        )
    cfg["experiment"] = args.experiment
    if args.grid is not None:
        cfg.setdefault("geometry", {})["N"] = args.grid
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.threads is not None:
        cfg["threads"] = args.threads
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        report = run(_config_from_args(args), args.out)
    except (ConfigurationError, PreconditionError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolvabilityError, NumericalError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for name, c in report.checks.items():
        print(f"{'PASS' if c['passed'] else 'FAIL'} {name} value={c['value']} tol={c['tolerance']}")
    print(f"wrote {report.experiment} report to {args.out}")
    return EXIT_OK if report.passed else EXIT_ASSERT


if __name__ == "__main__":
    sys.exit(main())
