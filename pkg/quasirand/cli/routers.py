"""Subcommand registration."""

import argparse

from quasirand.cli import estimate, numstudy, simulate, verify

COMMANDS = (simulate, numstudy, estimate, verify)


def register_commands(subparsers: argparse._SubParsersAction) -> None:
    """Add every subcommand parser."""
    for command in COMMANDS:
        command.register(subparsers)


__all__ = ["COMMANDS", "register_commands"]
