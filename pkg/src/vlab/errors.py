"""Exception types shared across the package."""


class DomainError(ValueError):
    """Argument outside the domain of a function or model."""


class HypergeometricError(ArithmeticError):
    """The 2F1 series did not converge within the term cap."""


class EstimationError(ArithmeticError):
    """A statistical estimate is undefined for the supplied data."""


class SamplingError(ArithmeticError):
    """Covariance factorization failed even after maximal jitter."""


class KernelSingularityError(DomainError):
    """Kernel evaluated where it is undefined."""


class UnsupportedRegimeError(DomainError):
    """A check was requested outside the parameter range it is valid for."""
