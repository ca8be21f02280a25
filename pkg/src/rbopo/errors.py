"""Exception types raised across the package."""


class RbopoError(Exception):
    """Base class for all toolkit errors."""


class AlignmentError(RbopoError, ValueError):
    """Two traces do not share a frequency grid."""


class MetadataError(RbopoError, ValueError):
    """Two traces were recorded with different analyzer settings."""


class DegenerateDenominatorError(RbopoError, ValueError):
    """A normalization denominator is zero or negative somewhere.

    ``frequencies`` holds the offending grid points in Hz.
    """

    def __init__(self, message, frequencies=()):
        super().__init__(message)
        self.frequencies = tuple(float(f) for f in frequencies)


class OutOfModelError(RbopoError, ValueError):
    """Parameters fall outside the validity range of a physical approximation."""


class BelowThresholdError(RbopoError, ValueError):
    """An operating point below the oscillation threshold was requested."""


class UnphysicalCorrectionError(RbopoError, ValueError):
    """Loss correction would produce a non-positive noise power."""


class NumericalError(RbopoError, ArithmeticError):
    """A root finder or iterative solver failed; ``diagnostics`` says how."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class ConvergenceError(NumericalError):
    """Least squares did not converge; ``params`` holds the last iterate."""

    def __init__(self, message, params=None, diagnostics=None):
        super().__init__(message, diagnostics)
        self.params = params


class DegenerateFitError(NumericalError):
    """The fit problem is singular or has no identifiable solution."""


class GenerationError(RbopoError, RuntimeError):
    """Synthetic data generation could not produce physical values."""


class ConfigError(RbopoError, ValueError):
    """A run configuration failed schema validation."""
