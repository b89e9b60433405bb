"""Exception hierarchy shared across the package.

Each class maps to a CLI exit code: ConfigError -> 1, NumericError -> 2,
InvariantError -> 3. Everything else is a plain bug and escapes as-is.
"""


class DrrNetError(Exception):
    """Base class for all package-raised errors."""


class ConfigError(DrrNetError):
    """Bad configuration: unknown keys, invalid values, mismatched files."""

    exit_code = 1


class NumericError(DrrNetError):
    """Numerical failure: NaN/Inf values, divergence, broken reconstruction."""

    exit_code = 2


class InvariantError(DrrNetError):
    """A structural invariant was violated (e.g. reversible entry with beta=0)."""

    exit_code = 3


class ShapeError(InvariantError):
    """Operand shapes are incompatible for the requested operation."""


class PrecisionError(InvariantError):
    """Operands carry different element precision tags."""
