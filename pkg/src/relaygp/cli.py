"""Command-line entry point: ``relaygp run <config> [options]``."""

import argparse
import logging
import sys

from .errors import ConfigError, RelayGPError
from .experiment import MAX_SEED, load_config, run_experiment, with_overrides

log = logging.getLogger("relaygp")


def _seed(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text}") from None
    if not 0 <= v <= MAX_SEED:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _jobs(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("jobs must be >= 1")
    return v


def build_parser():
    parser = argparse.ArgumentParser(
        prog="relaygp",
        description="GP identification of relay functions: simulation experiments.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the experiment described by a config file")
    run.add_argument("config", help="path to a key=value config file")
    run.add_argument("--out-dir", help="output directory (overrides output_dir)")
    run.add_argument("--seed", type=_seed, help="master seed (overrides master_seed)")
    run.add_argument("--jobs", type=_jobs, default=1, help="worker processes (default 1)")
    run.add_argument(
        "--validate-only", action="store_true", help="parse and check the config, then exit",
    )
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config)
        cfg = with_overrides(cfg, master_seed=args.seed, output_dir=args.out_dir)
    except OSError as err:
        print(f"error: cannot read {args.config}: {err.strerror}", file=sys.stderr)
        return 2
    except ConfigError as err:
        print(f"error: {args.config}: {err}", file=sys.stderr)
        return 2
    if args.validate_only:
        print(f"{args.config}: ok")
        return 0
    try:
        failed = run_experiment(cfg, cfg.output_dir, args.jobs)
    except RelayGPError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    if failed:
        print(f"error: {failed} run(s) failed, see log", file=sys.stderr)
        return 1
    log.info("wrote results to %s", cfg.output_dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
