"""``verify``: oracle checks of the closed forms."""

import argparse
import logging

from quasirand.cli.arguments import add_seed
from quasirand.cli.dependencies import get_verification_service
from quasirand.core.exceptions import EXIT_OK
from quasirand.schemas.schemas import CliConfig, Command

logger = logging.getLogger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser(Command.VERIFY.value, help="brute-force and gradient checks")
    parser.add_argument("--n-max", type=int, default=4, help="largest population enumerated by brute force (2-6)")
    add_seed(parser)
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    config = CliConfig(command=Command.VERIFY, n_max=args.n_max, seed=args.seed)
    checks = get_verification_service(config.n_max, config.seed).run()
    logger.info(f"All {len(checks)} checks passed")
    return EXIT_OK
