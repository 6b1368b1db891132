"""Exception hierarchy and its mapping onto process exit codes."""

from typing import Any

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class QuasirandError(Exception):
    """Base class for all toolkit errors."""

    exit_code = EXIT_FAILURE

    def __init__(self, message: str, *, details: list[Any] | None = None) -> None:
        super().__init__(message)
        self.message = message
        self.details = details or []


class InputError(QuasirandError, ValueError):
    """Invalid input data or arguments."""

    exit_code = EXIT_USAGE


class MethodRequirementError(InputError):
    """Data lacks a quantity the requested estimator needs."""


class NumericError(QuasirandError, ArithmeticError):
    """Non-finite evaluation of a likelihood or variance."""

    def __init__(self, message: str, *, row: int | None = None) -> None:
        super().__init__(message if row is None else f"{message} (row {row})")
        self.row = row


class VerificationError(QuasirandError):
    """An oracle check disagreed with its closed form."""


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the CLI exit code."""
    if isinstance(exc, QuasirandError):
        return exc.exit_code
    if isinstance(exc, ValueError):
        return EXIT_USAGE
    return EXIT_FAILURE
