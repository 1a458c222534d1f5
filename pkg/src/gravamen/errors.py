"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes: config problems, data problems
and runtime failures are distinguishable by a caller.
"""


class GravamenError(Exception):
    """Base class for all package errors."""


class ShapeError(GravamenError):
    """Operands or parameters with incompatible dimensions."""


class NumericalError(GravamenError):
    """NaN/Inf encountered, or a computation that should be deterministic
    produced differing results."""


class DataError(GravamenError):
    """Malformed corpus, labels, or resource files."""


class ConfigError(GravamenError):
    """Invalid experiment configuration."""
