"""Volterra processes driven by Brownian motion: kernels, paths and integrals."""

from .errors import (DomainError, EstimationError, HypergeometricError,
                     KernelSingularityError, SamplingError, UnsupportedRegimeError)
from .grid import SampledFunction, UniformGrid
from .kernels import KernelModel
from .paths import PathBundle, RngSeed
from .integrals import Integrand, IntegralEstimate
from .verify import VerificationReport

__version__ = "0.1.0"

__all__ = [
    "DomainError",
    "EstimationError",
    "HypergeometricError",
    "KernelSingularityError",
    "SamplingError",
    "UnsupportedRegimeError",
    "SampledFunction",
    "UniformGrid",
    "KernelModel",
    "PathBundle",
    "RngSeed",
    "Integrand",
    "IntegralEstimate",
    "VerificationReport",
]
