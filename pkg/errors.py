"""
Exception hierarchy shared by the forward models, the fitting engine and the CLI.
"""

import math
from typing import Optional


class PurcellError(ValueError):
    """Base class for toolkit errors"""


class InvalidInputError(PurcellError):
    """Malformed or non-finite input"""


class DomainError(PurcellError):
    """Input lies in a forbidden region of a formula"""


class FitFailureError(PurcellError):
    """A fit could not produce a usable result"""

    def __init__(self, message: str, residual_norm: Optional[float] = None):
        super().__init__(message)
        self.residual_norm = residual_norm


class ExtractionError(PurcellError):
    """Population extraction from a histogram failed"""


class DataError(PurcellError):
    """Dataset does not match its schema"""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[str] = None):
        location = []
        if line is not None:
            location.append(f"line {line}")
        if column is not None:
            location.append(f"column '{column}'")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)
        self.line = line
        self.column = column


def require_finite(**values: float) -> None:
    """Raise InvalidInputError naming the first non-finite argument"""
    for name, value in values.items():
        if not math.isfinite(value):
            raise InvalidInputError(f"{name} must be finite, got {value!r}")
