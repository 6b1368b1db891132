"""Logging configuration for the toolkit."""

import logging
import sys
from typing import Any

from quasirand.core.config import settings


def setup_logging(level: str | None = None) -> None:
    """Configure logging for command-line runs."""
    log_level = getattr(logging, (level or settings.LOG_LEVEL).upper())

    # Data goes to files or stdout, progress lines to stderr
    logging.basicConfig(
        level=log_level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[logging.StreamHandler(sys.stderr)],
        force=True,
    )
    logging.captureWarnings(True)

    loggers = {
        "quasirand": {"level": log_level},
        "py.warnings": {"level": logging.WARNING},
        "statsmodels": {"level": logging.WARNING},
    }

    for logger_name, config in loggers.items():
        _configure_logger(logger_name, config)


def _configure_logger(name: str, config: dict[str, Any]) -> None:
    """Apply one entry of the logger level table."""
    logger = logging.getLogger(name)
    logger.setLevel(config.get("level", logging.INFO))
    logger.propagate = config.get("propagate", True)
