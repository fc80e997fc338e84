"""
Exception hierarchy shared by every pmdlab module.
"""
from typing import Optional


class PmdLabError(Exception):
    """Base class for all pmdlab failures."""


class InputError(PmdLabError, ValueError):
    """Bad arguments: dimension mismatches, empty batches, invalid settings."""


class NumericalError(PmdLabError, ArithmeticError):
    """A numerical routine failed (singular solve, divergent quadrature, NaN)."""


class DomainError(NumericalError):
    """A quantity was requested outside the domain where it is finite."""


class GridValidationError(InputError):
    """A grid specification or map text is invalid."""


class RetryLimitError(PmdLabError):
    """Rejection sampling gave up after its retry cap."""


class ArtifactError(PmdLabError):
    """A persisted artifact could not be read back."""

    def __init__(self, message: str, byte_offset: Optional[int] = None):
        if byte_offset is not None:
            message = f"{message} (at byte offset {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset
