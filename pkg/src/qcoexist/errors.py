"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class QcoexistError(Exception):
    """Base class for toolkit errors."""


class ConfigurationError(QcoexistError, ValueError):
    """Invalid scenario, spec or argument."""


class CalibrationError(QcoexistError):
    """Calibration could not satisfy its anchors."""

    def __init__(self, message: str, residuals: dict | None = None):
        super().__init__(message)
        self.residuals = residuals or {}


class DegenerateError(QcoexistError, ValueError):
    """A quantity is undefined for the given input (zero denominator, empty data)."""


class PreconditionError(QcoexistError, ValueError):
    """Input violates an operation precondition (e.g. unsorted stream)."""


class NoPeakError(QcoexistError):
    """No significant coincidence peak in the searched delay range."""


class FitError(QcoexistError):
    """Nonlinear fit did not converge; the best candidate is attached."""

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class InversionError(QcoexistError):
    """Linear tomography design matrix is singular."""


class LinkDownError(QcoexistError):
    """Classical link margin is negative, so time transfer is unavailable."""


class ParseError(QcoexistError, ValueError):
    """Malformed tag or data file; the message names the line or byte offset."""
