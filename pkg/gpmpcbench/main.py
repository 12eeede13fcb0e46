"""Command line entry point"""

import argparse
import logging
import os
import sys

from . import experiment, params, validate
from .config import load_config
from .errors import ConfigError, GpmpcError

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INVALID = 2

def _seed(text):
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64 bit integer")
    return value

def _jobs(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("jobs must be at least 1")
    return value

def build_parser():
    parser = argparse.ArgumentParser(prog="gpmpcbench", description="GP based MPC benchmark runner")
    parser.add_argument("--verbose", action="store_true", help="Log debug messages")
    commands = parser.add_subparsers(dest="command", required=True)

    def add_common(sub, needs_config):
        if needs_config:
            sub.add_argument("--config", required=True, help="Run configuration JSON")
        sub.add_argument("--out", default=None, help="Output directory")
        sub.add_argument("--jobs", type=_jobs, default=None, help="Worker threads")
        sub.add_argument("--seed", type=_seed, default=None, help="Master seed")

    add_common(commands.add_parser("train", help="Collect data if needed and fit the GP model"), True)
    add_common(commands.add_parser("simulate", help="Run closed loop trials"), True)
    compare = commands.add_parser("compare", help="Tabulate metric ratios between runs")
    compare.add_argument("run_dirs", nargs="+", help="Run output directories, the first is the baseline")
    add_common(compare, False)
    add_common(commands.add_parser("validate", help="Run the oracle suites"), False)
    return parser

def _load(args):
    return load_config(args.config).with_overrides(output_dir=args.out, seed=args.seed, jobs=args.jobs)

def run(args):
    """Dispatch one subcommand, returns the exit code"""
    if args.command == "train":
        report = experiment.run_train(_load(args))
        logging.info("Training MSE %s", report["training_mse"])
    elif args.command == "simulate":
        aggregate = experiment.run_simulate(_load(args))
        logging.info("Aggregate %s", aggregate)
    elif args.command == "compare":
        table = experiment.run_compare(args.run_dirs, args.out or ".")
        print(table.to_string(index=False))
    else:
        results = validate.run_validation(seed=args.seed or 0, jobs=args.jobs or 1)
        out_dir = args.out or "."
        os.makedirs(out_dir, exist_ok=True)
        experiment.write_json(validate.validation_document(results), os.path.join(out_dir, params.VALIDATION_NAME))
        for result in results:
            print(f"{result.name:24s} {'pass' if result.passed else 'FAIL'}  {result.measured:.3g} <= {result.tolerance:.3g}")
        if not all(result.passed for result in results):
            return EXIT_FAILURE
    return EXIT_OK

def main(argv=None):
    """Main"""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(filename)s: %(message)s",
    )
    try:
        return run(args)
    except ConfigError as err:
        logging.error("Invalid input: %s", err)
        return EXIT_INVALID
    except (GpmpcError, OSError) as err:
        logging.error("%s", err)
        return EXIT_FAILURE

if __name__ == "__main__":
    sys.exit(main())
