"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration/usage problems exit 1,
data problems (files, matrices, dimensions) exit 2, numeric failures exit 3.
"""


class SpdbowError(Exception):
    """Base class for all package errors."""


class ConfigError(SpdbowError):
    """Invalid configuration value or inconsistent parameters."""


class DataFormatError(SpdbowError):
    """A file failed validation (bad magic, truncation, malformed rows)."""


class NotSpdError(SpdbowError):
    """A matrix failed the symmetric positive definite eigenvalue check."""


class DimensionMismatchError(SpdbowError):
    """Operands have incompatible dimensions or channel layouts."""


class EmptyQueryError(SpdbowError):
    """An encoder was asked to summarize an empty descriptor set."""


class NonConvergenceError(SpdbowError):
    """An iterative numeric routine exhausted its budget without converging."""


class NumericOverflowError(SpdbowError):
    """A result would exceed the representable floating-point range."""
