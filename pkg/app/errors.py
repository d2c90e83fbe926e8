"""Exception hierarchy for the auditing toolkit."""
from __future__ import annotations

from typing import Optional


class AuditError(Exception):
    """Base class for every error raised by the toolkit."""


class DimensionError(AuditError, ValueError):
    """Two distributions or histograms do not share an alphabet."""


class DomainError(AuditError, ValueError):
    """A parameter lies outside the range an operation accepts."""


class RegimeError(AuditError, ValueError):
    """An estimator was called outside the regime it is defined for."""


class DegenerateWidthError(AuditError, ValueError):
    """The Case-2 window width collapsed to zero."""


class ConvergenceError(AuditError, RuntimeError):
    """The Remez exchange did not settle within its iteration cap."""

    def __init__(
        self,
        message: str,
        *,
        iterations: int = 0,
        spread: Optional[float] = None,
        levelled_error: Optional[float] = None,
    ) -> None:
        super().__init__(message)
        self.iterations = iterations
        self.spread = spread
        self.levelled_error = levelled_error

    def diagnostics(self) -> dict:
        return {
            "iterations": self.iterations,
            "spread": self.spread,
            "levelled_error": self.levelled_error,
        }


class DegenerateAuditError(AuditError, RuntimeError):
    """An audit produced no observable outputs."""
