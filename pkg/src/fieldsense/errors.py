"""Exception types shared across the package."""


class FieldSenseError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(FieldSenseError, ValueError):
    """A parameter violates a documented precondition."""


class ResourceLimitError(FieldSenseError):
    """Requested Hilbert-space dimension exceeds the configured cap."""

    def __init__(self, message, dimension=None, cap=None):
        super().__init__(message)
        self.dimension = dimension
        self.cap = cap


class ConvergenceError(FieldSenseError):
    """An iterative solver failed to reach the requested tolerance.

    Carries the last residual (and optionally a residual history) so callers
    can report how far the solve got.
    """

    def __init__(self, message, residual=None, history=None):
        super().__init__(message)
        self.residual = residual
        self.history = history or []


class PoleError(FieldSenseError, ZeroDivisionError):
    """Propagator evaluated on shell with a vanishing pole prescription."""


class IllConditionedError(FieldSenseError):
    """A linear inversion was requested with a (near-)singular system."""


class FitError(FieldSenseError):
    """A model fit could not resolve the requested quantity."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class UnsupportedError(FieldSenseError, NotImplementedError):
    """A combination of options is outside the supported protocol family."""
