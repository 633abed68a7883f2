"""Exception and warning types shared across the package."""


class StormsimError(Exception):
    """Base class for all package errors."""


class ConfigError(StormsimError):
    """Invalid configuration or invalid argument combination."""


class DataError(StormsimError):
    """Input data violates a documented contract."""


class ParseError(DataError):
    """Malformed input file; message names the offending row/column."""


class InsufficientDataError(DataError):
    """Too few observations for the requested fit or estimate."""


class DomainError(StormsimError):
    """Function evaluated outside its mathematical domain."""


class FitError(StormsimError):
    """Model fitting failed (non-convergence, degenerate sample, ...)."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class CensoredPeakError(StormsimError):
    """Peak window extends beyond the available series."""


class ReparamUndefinedError(StormsimError):
    """Coefficient reparameterization has a zero divisor."""


class SimulationError(StormsimError):
    """Simulation failed (e.g. rejection cap exceeded)."""


class CIError(StormsimError):
    """Bootstrap confidence interval could not be formed."""


class StormsimWarning(UserWarning):
    """Base class for package warnings."""


class ClampedProbabilityWarning(StormsimWarning):
    """A probability estimate of 0 or 1 was clamped to the sample range."""


class KernelUnderflowWarning(StormsimWarning):
    """All kernel weights underflowed; nearest-neighbour fallback used."""


class BoundaryWarning(StormsimWarning):
    """A fitted parameter sits at a constraint boundary."""


class RejectionRateWarning(StormsimWarning):
    """Excursion simulation rejection rate is unusually high."""


class DegenerateFitWarning(StormsimWarning):
    """Fit succeeded but the sample was degenerate (e.g. zero residual spread)."""


class EmptyResponseWindowWarning(StormsimWarning):
    """Response index set is empty; the response value defaults to zero."""
