"""``numstudy``: theoretical standard errors over sampling-fraction grids."""

import argparse
import logging
from pathlib import Path

from quasirand.cli.arguments import OVERLAP_CHOICES, add_seed, float_list, method, overlaps
from quasirand.cli.dependencies import get_numerical_study_service
from quasirand.core.exceptions import EXIT_OK
from quasirand.models.models import ONE_STEP_METHODS
from quasirand.schemas.schemas import CliConfig, Command, GridSpec

logger = logging.getLogger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    defaults = GridSpec()
    parser = subparsers.add_parser(Command.NUMSTUDY.value, help="theoretical SE grid")
    parser.add_argument("--f-c", type=float_list, default=defaults.f_c, help="comma-separated f_c values")
    parser.add_argument("--f-r", type=float_list, default=defaults.f_r, help="comma-separated f_r values")
    parser.add_argument("--overlap", choices=OVERLAP_CHOICES, default="both")
    parser.add_argument("--population-size", type=int, default=100_000)
    parser.add_argument("--methods", type=method, nargs="+", default=None)
    add_seed(parser)
    parser.add_argument("--out", type=Path, required=True, help="output directory")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    """Write numstudy.csv with one row per (f_c, f_r, overlap, method)."""
    config = CliConfig(
        command=Command.NUMSTUDY,
        grid=GridSpec(f_c=args.f_c, f_r=args.f_r),
        overlap=overlaps(args.overlap),
        population_size=args.population_size,
        methods=args.methods,
        seed=args.seed,
        out=args.out,
    )
    points = get_numerical_study_service(config.out).run(
        config.grid,
        config.overlap,
        population_size=config.population_size,
        seed=config.seed,
        methods=config.methods or ONE_STEP_METHODS,
    )
    logger.info(f"Computed {len(points)} grid points")
    return EXIT_OK
