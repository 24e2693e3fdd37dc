"""Exception types shared across the package."""


class ValidationError(ValueError):
    """An argument or state violates a documented invariant."""


class ConfigError(ValidationError):
    """A run-configuration file is malformed; the message names the field."""


class DataFormatError(ValueError):
    """An input data file cannot be parsed; the message carries file/line context."""


class ResourceLimitError(RuntimeError):
    """A request exceeds a hard desk-scale ceiling (e.g. enumeration size)."""


class ConvergenceError(RuntimeError):
    """An iterative solver failed to reach its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NumericalError(RuntimeError):
    """A numerical precondition failed (singular matrix, bad curvature, ...)."""
