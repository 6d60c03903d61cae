"""Exception types shared across the package."""


class MeankamError(Exception):
    """Base class for all package errors."""


class ValidationError(MeankamError, ValueError):
    """Input violates a structural invariant (non-monotone lift, bad config)."""


class DimensionMismatchError(MeankamError, ValueError):
    """Operands carry different particle counts."""


class ArityError(MeankamError, ValueError):
    """A count argument is incompatible (e.g. block size not dividing n)."""


class UnsupportedError(MeankamError, RuntimeError):
    """Operation not defined for this model (e.g. energy with time-dependent V)."""


class KernelNotBuiltError(MeankamError, RuntimeError):
    """A value sweep was requested before the unit-time kernel was computed."""


class GridTooSmallError(MeankamError, ValueError):
    """An argmax/argmin landed on the boundary of a parameter grid."""
