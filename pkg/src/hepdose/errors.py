"""Exception types shared across the package.

Every error raised on purpose derives from ``HepdoseError`` so callers can
catch the package's failures without also swallowing programming mistakes.
"""

from __future__ import annotations


class HepdoseError(Exception):
    """Base class for all deliberate failures raised by this package."""


class InvalidParameterError(HepdoseError, ValueError):
    """A parameter lies outside its declared domain."""


class NumericError(HepdoseError, RuntimeError):
    """An iterative numeric routine failed to converge."""


class EstimationFailedError(HepdoseError, RuntimeError):
    """No parameter candidate produced a finite likelihood/posterior."""


class PlanningFailedError(HepdoseError, RuntimeError):
    """Dose planning could not produce a feasible plan."""


class ChartValidationError(HepdoseError, ValueError):
    """A chart file failed validation.

    ``row_errors`` lists ``(row_number, message)`` pairs, 1-based on the
    physical line in the file, so a clinician can fix the offending rows.
    """

    def __init__(self, row_errors):
        self.row_errors = list(row_errors)
        lines = "; ".join(f"row {r}: {msg}" for r, msg in self.row_errors)
        super().__init__(f"chart validation failed: {lines}")


class ReportFormatError(HepdoseError, ValueError):
    """A serialized report is malformed, has a bad schema id, or carries
    fields the schema does not declare."""


class ConfigError(HepdoseError, ValueError):
    """A configuration value is out of range or inconsistent."""
