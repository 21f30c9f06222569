"""
Exceptions shared by the TransNN Lab services.
The CLI maps each family onto an exit code.
"""

from typing import Optional


class TransNNError(Exception):
    """Base class for every error raised by the services."""


class DomainError(TransNNError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ValidationError(TransNNError, ValueError):
    """A network, file or configuration violates its schema or invariants."""

    def __init__(self, message: str, location: Optional[str] = None):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class RangeError(TransNNError, ValueError):
    """An exact-integer computation was asked for a value outside its guarded range."""


class NumericalError(TransNNError, ArithmeticError):
    """A computation produced NaN. `where` names the step, epoch or batch."""

    def __init__(self, message: str, where: Optional[dict] = None):
        self.where = where or {}
        suffix = ", ".join(f"{k}={v}" for k, v in self.where.items())
        super().__init__(f"{message} ({suffix})" if suffix else message)


class ConvergenceError(TransNNError, RuntimeError):
    """An iterative method did not converge within its iteration cap."""
