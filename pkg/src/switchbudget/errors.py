"""Exception hierarchy.

Each class maps to one failure family so the CLI can translate it into a
distinct exit code.
"""

from __future__ import annotations


class SwitchBudgetError(Exception):
    """Base class for every error raised by this package."""


class DomainError(SwitchBudgetError, ValueError):
    """An argument lies outside the domain of a function."""


class InvalidTrajectoryError(SwitchBudgetError, ValueError):
    """An action sequence does not fit the loss matrix it is scored against."""


class EstimatorError(SwitchBudgetError, ValueError):
    """A loss estimate is negative, non-finite or inconsistent with its inputs."""


class InternalInvariantError(SwitchBudgetError, RuntimeError):
    """A state invariant that should be impossible to break was broken."""


class SpecResolutionError(SwitchBudgetError, ValueError):
    """A learner configuration cannot be built from (T, K, B, M)."""


class BudgetTooSmallError(SpecResolutionError):
    pass


class RangeError(SpecResolutionError):
    pass


class ModeError(SpecResolutionError):
    pass


class ConfigurationError(SpecResolutionError):
    pass


class RegimeError(SwitchBudgetError, ValueError):
    """A hard-instance gap is too large for the clipping argument to hold."""


class BudgetViolation(SwitchBudgetError, RuntimeError):
    """An observation was charged beyond the available budget."""


class ParseError(SwitchBudgetError, ValueError):
    """A loss-matrix file is malformed.  ``row`` is 1-based and counts the header."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class ConfigError(SwitchBudgetError, ValueError):
    """A run configuration file is malformed or has unknown keys."""


class InsufficientDataError(SwitchBudgetError, ValueError):
    """Too few points for a slope fit or a two-piece fit."""
