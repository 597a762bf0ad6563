"""Exception hierarchy shared by every module."""

from __future__ import annotations

from typing import Any


class RMTError(Exception):
    """Base class for all errors raised by this package."""


class ArgumentError(RMTError, ValueError):
    """An argument is outside the operation's domain."""


class PreconditionError(ArgumentError):
    """A mathematical precondition of the operation does not hold."""


class CapacityError(RMTError):
    """Exact enumeration was requested on an instance that is too large."""


class NumericError(RMTError, ArithmeticError):
    """A quantity could not be computed in floating point."""


class ConvergenceError(RMTError):
    """An iterative method stopped before meeting its tolerance.

    ``value`` and ``vector`` hold the best iterate seen.
    """

    def __init__(self, message: str, value: float, vector: Any, residual: float):
        super().__init__(message)
        self.value = value
        self.vector = vector
        self.residual = residual


class ExhaustionError(RMTError):
    """A budgeted search ran out of candidates; ``best`` holds the best one found."""

    def __init__(self, message: str, best: Any = None):
        super().__init__(message)
        self.best = best


class InvariantViolation(RMTError):
    """An algorithm invariant failed, which signals data outside the model."""


class ConfigError(RMTError):
    """Invalid experiment configuration or CLI usage."""


class ExperimentError(RMTError):
    """An experiment could not produce a trustworthy report."""
