"""Exception types shared across the package."""


class DeepSomError(Exception):
    """Base class for every error this package raises deliberately."""


class ConfigurationError(DeepSomError):
    """Invalid geometry, dimensions, or parameter values."""


class NumericError(DeepSomError):
    """Non-finite values appeared where finite numbers are required."""


class DataFormatError(DeepSomError):
    """Malformed, truncated, or inconsistent data files."""


class CalibrationError(DeepSomError):
    """Label assignment or advance-cache construction could not complete."""


class CheckpointError(DeepSomError):
    """Unreadable, corrupt, or structurally mismatched checkpoint files."""
