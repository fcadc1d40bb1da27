"""Exception hierarchy shared by every module."""

from __future__ import annotations


class QDecayError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(QDecayError, ValueError):
    """An argument violates a documented precondition."""


class ConfigError(InvalidArgumentError):
    """An experiment or CLI configuration is malformed."""


class NumericFailureError(QDecayError, ArithmeticError):
    """A numerical procedure failed (divergence, non-finite values, indefinite matrix).

    ``step`` carries the iteration index when it is known and ``residual`` the
    last residual of an iterative solver.
    """

    def __init__(self, message: str, *, step: int | None = None, residual: float | None = None):
        super().__init__(message)
        self.step = step
        self.residual = residual


class DegenerateMarginError(QDecayError, ValueError):
    """Q* has tied optimal actions, so the margin condition is void."""
