"""Argument types shared by the subcommands."""

import argparse

from quasirand.models.models import MethodKind, Overlap

OVERLAP_CHOICES = ("high", "low", "both")


def overlaps(value: str) -> list[Overlap]:
    """``both`` expands to high then low."""
    if value == "both":
        return [Overlap.HIGH, Overlap.LOW]
    return [Overlap(value)]


def method(value: str) -> MethodKind:
    try:
        return MethodKind(value.upper())
    except ValueError as e:
        choices = ", ".join(m.value for m in MethodKind)
        raise argparse.ArgumentTypeError(f"unknown method {value!r} (choose from {choices})") from e


def float_list(value: str) -> list[float]:
    """Comma-separated numbers, e.g. ``0.05,0.19``."""
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"malformed number list {value!r}") from e


def add_seed(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="master seed (QUASIRAND_SEED overrides)")
