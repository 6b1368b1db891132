"""``simulate``: Monte Carlo runs of the predefined scenarios."""

import argparse
import logging
from pathlib import Path

from quasirand.cli.arguments import OVERLAP_CHOICES, add_seed, overlaps
from quasirand.cli.dependencies import get_simulation_service
from quasirand.core.config import settings
from quasirand.core.exceptions import EXIT_OK
from quasirand.schemas.schemas import CliConfig, Command

logger = logging.getLogger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser(Command.SIMULATE.value, help="run a Monte Carlo scenario")
    parser.add_argument("--scenario", required=True, help="scenario id, S1..S7")
    parser.add_argument("--overlap", choices=OVERLAP_CHOICES, default="high")
    parser.add_argument("--reps", type=int, default=1000)
    add_seed(parser)
    parser.add_argument("--out", type=Path, required=True, help="output directory")
    parser.add_argument("--threads", type=int, default=None, help="worker processes (default: all cores)")
    parser.add_argument(
        "--include-alp",
        action="store_true",
        help="fit ALP in every replicate and write the two-step comparison of predicted probabilities",
    )
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    """
    Run every requested overlap setting of one scenario.

    Writes summary.csv, replicates.csv and overlap_hist.csv, plus the
    ALP rows and the step_comparison files with ``--include-alp``.
    """
    config = CliConfig(
        command=Command.SIMULATE,
        scenario=args.scenario,
        overlap=overlaps(args.overlap),
        reps=args.reps,
        seed=args.seed,
        out=args.out,
        threads=args.threads or settings.worker_count,
        include_alp=args.include_alp,
    )
    service = get_simulation_service(config.out)
    summaries = service.run(
        config.scenario,
        config.overlap,
        reps=config.reps,
        seed=config.seed,
        workers=config.threads,
        include_alp=config.include_alp,
        hist_bins=settings.HIST_BINS,
    )
    for summary in summaries:
        if summary.flagged_methods:
            flagged = ", ".join(m.value for m in summary.flagged_methods)
            logger.warning(f"{summary.config.label}: most fits failed for {flagged}")
    return EXIT_OK
