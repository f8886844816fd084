"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class DimectError(Exception):
    """Base class for all package errors."""


class InputError(DimectError, ValueError):
    """A caller supplied a missing, unknown or malformed input."""


class ArityError(InputError):
    """A collection has the wrong number of elements."""


class DomainError(DimectError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class NumericalError(DimectError, ArithmeticError):
    """A numerical procedure failed to reach its tolerance.

    ``error_estimate`` carries the best error bound that was achieved.
    """

    def __init__(self, message: str, error_estimate: float = float("nan")):
        super().__init__(message)
        self.error_estimate = error_estimate


class EstimationInfeasibleError(DimectError):
    """No measurement produced an estimate inside the feasibility region."""

    def __init__(self, message: str, regions: list | None = None):
        super().__init__(message)
        self.regions = list(regions or [])
