"""``estimate``: participation probabilities and the weighted mean for user files."""

import argparse
import logging
import sys
from pathlib import Path

from quasirand.cli.arguments import method
from quasirand.cli.dependencies import get_estimation_service
from quasirand.core.exceptions import EXIT_OK
from quasirand.models.models import PlugInConvention
from quasirand.schemas.schemas import CliConfig, Command

logger = logging.getLogger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser(Command.ESTIMATE.value, help="estimate from convenience and reference CSVs")
    parser.add_argument("--convenience", type=Path, required=True, help="CSV with y,x1..xp[,pi_r]")
    parser.add_argument("--reference", type=Path, required=True, help="CSV with x1..xp,pi_r")
    parser.add_argument("--methods", type=method, nargs="+", default=None)
    parser.add_argument(
        "--convention",
        choices=[c.value for c in PlugInConvention],
        default=PlugInConvention.CONVENIENCE.value,
        help="sample estimating the outcome-free variance matrices",
    )
    parser.add_argument("--out", type=Path, default=None, help="output directory (default: JSON on stdout)")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    """
    Fit the requested methods and emit the JSON result.

    Expected convenience columns:
    - y (outcome)
    - x1..xp (covariates)
    - pi_r (optional, reference-design probability, required by ILR)

    Any invalid row aborts the run with all row errors reported.
    """
    config = CliConfig(
        command=Command.ESTIMATE,
        convenience=args.convenience,
        reference=args.reference,
        methods=args.methods,
        convention=args.convention,
        out=args.out,
    )
    service = get_estimation_service(config.convenience, config.reference, config.out)
    response = service.estimate(config.methods, convention=config.convention)
    if config.out is None:
        sys.stdout.write(response.model_dump_json(indent=2, by_alias=True) + "\n")
    return EXIT_OK
