"""Command-line entry point: builds the parser, configures logging and maps errors to exit codes."""

import argparse
import logging
import sys

from quasirand.cli.routers import register_commands
from quasirand.core.config import Settings, settings
from quasirand.core.exceptions import EXIT_FAILURE, exit_code_for
from quasirand.core.logging import setup_logging

logger = logging.getLogger(__name__)


def get_application() -> argparse.ArgumentParser:
    """Initialize and configure the argument parser."""
    parser = argparse.ArgumentParser(
        prog=settings.PROJECT_NAME,
        description="""
        Participation probabilities of non-probability samples estimated against a
        probability reference sample, with inverse-probability-weighted means and
        plug-in variances.

        Commands:
          simulate   Monte Carlo scenarios S1-S7
          numstudy   theoretical standard errors over sampling-fraction grids
          estimate   one-shot estimation from convenience and reference CSVs
          verify     closed-form checks against brute force and finite differences
        """,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument(
        "--log-level",
        type=str.upper,
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        default=None,
        help="override QUASIRAND_LOG_LEVEL",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    register_commands(subparsers)
    return parser


def main(argv: list[str] | None = None) -> int:
    """Run one command and return its exit code."""
    parser = get_application()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    setup_logging(args.log_level)

    try:
        # Read at call time so an exported variable applies to this run
        seed_override = Settings().SEED
        if seed_override is not None and hasattr(args, "seed"):
            logger.info(f"QUASIRAND_SEED={seed_override} overrides --seed {args.seed}")
            args.seed = seed_override
        return args.handler(args)
    except Exception as e:
        code = exit_code_for(e)
        if code == EXIT_FAILURE and not hasattr(e, "exit_code"):
            logger.exception(f"{args.command} failed")
        else:
            logger.error(f"{args.command}: {e!s}")
        return code


if __name__ == "__main__":
    sys.exit(main())
