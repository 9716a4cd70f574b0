"""Exception types shared across the package."""


class BearingDAError(Exception):
    """Base class for all package errors."""


class ParameterError(BearingDAError, ValueError):
    """An argument violates a documented precondition."""


class DegenerateInputError(BearingDAError, ValueError):
    """Input data is degenerate (e.g. zero variance)."""


class ShapeError(BearingDAError, ValueError):
    """Tensor or array shapes are incompatible."""


class StateError(BearingDAError, RuntimeError):
    """An operation was called in the wrong state (e.g. backward twice)."""


class FormatError(BearingDAError, ValueError):
    """A file on disk is corrupt or has an unsupported version."""
