"""Participation-probability estimation for non-probability samples."""

__version__ = "0.1.0"
