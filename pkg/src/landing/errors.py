"""Exception hierarchy shared by all modules."""


class LandingError(Exception):
    """Base class for every error raised by this package."""


class ContractViolationError(LandingError, ValueError):
    """An argument violates a documented precondition (shape, range, symmetry...)."""


class SingularityError(LandingError, ValueError):
    """A matrix is (numerically) rank deficient where full rank is required."""


class NumericalError(LandingError, RuntimeError):
    """An iterative numerical procedure failed to converge or produced non-finite values."""


class ConfigError(LandingError, ValueError):
    """A run configuration, config file, or data file is malformed or inconsistent."""
