"""Exception taxonomy shared across the package.

CLI exit-code mapping: ConfigError -> 2, DataError -> 3, everything else
derived from NumericError -> 4.
"""


class SpkattrError(Exception):
    """Base class for all package errors."""


class ConfigError(SpkattrError):
    """Invalid or inconsistent configuration."""


class DataError(SpkattrError):
    """Malformed, missing, or unsatisfiable data."""


class NumericError(SpkattrError):
    """Numeric failure: divergence, non-finite values, failed checks."""


class ShapeError(NumericError):
    """Operand shapes incompatible with the requested operation."""


class DegenerateInputError(NumericError):
    """Input outside an operation's numeric domain (e.g. zero-norm vector)."""
