"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: validation errors exit 1,
numerical failures exit 2, I/O and file-format problems exit 3.
"""


class GzslError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(GzslError):
    """Invalid argument, configuration, or data (exit code 1)."""


class ShapeError(ValidationError):
    """Operands with incompatible dimensions."""


class NumericalError(GzslError):
    """Numerical failure: NaN/Inf values, divergence (exit code 2)."""


class DegenerateVectorError(NumericalError):
    """A vector with (near-)zero norm where a direction is required."""


class SingularMatrixError(NumericalError):
    """A linear system without a unique solution."""


class DataFormatError(GzslError):
    """Malformed or inconsistent data file (exit code 3)."""
