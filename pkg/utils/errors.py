"""
Exception hierarchy for singular-hjb.

Pure evaluation faults derive from ValueError so that callers doing plain
argument checking keep working; the CLI maps everything rooted at
SingularHJBError onto its exit codes.
"""

from typing import Any, Optional


class SingularHJBError(Exception):
    """Base class for every fault raised by this package."""


class ModelError(SingularHJBError, ValueError):
    """Malformed coefficients, atoms or model parameters."""


class AssumptionError(SingularHJBError):
    """A model failed one of the standing assumptions."""

    def __init__(self, message: str, report: Optional[Any] = None):
        super().__init__(message)
        self.report = report


class SchemeError(SingularHJBError):
    """The discrete scheme produced values it must never produce."""


class ConvergenceError(SingularHJBError):
    """The N-ladder ran out of rungs before meeting its tolerance."""


class ComparisonError(SingularHJBError):
    """Domination between two models could not be established analytically."""


class PolicyError(SingularHJBError, ValueError):
    """A policy requested an impossible trade (fill overshoot, wrong sign)."""


class FieldFormatError(SingularHJBError):
    """A value-field dump is missing, truncated or carries the wrong magic."""


class ConfigError(SingularHJBError, ValueError):
    """A run or model configuration file is invalid."""
