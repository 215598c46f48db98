"""Numerics for 3D super-Brownian motion with a single point source.

The package evaluates the one-point-interaction heat kernel, its mean
semigroup, the nonlinear log-Laplace equation, and the large-scale limit of
the expected measure, plus a Feynman-Kac Monte Carlo cross-check.
"""

__version__ = "0.1.0"

from .errors import (
    ConsistencyError,
    DomainError,
    MagnitudeOverflowError,
    QuadratureError,
)
from .kernel import (
    KernelEvalConfig,
    SignedLog,
    free_kernel,
    free_kernel_radial,
    interaction_bracket,
    interaction_kernel,
    interaction_kernel_log,
    laplace_tail_integral,
    laplace_tail_integral_quad,
    regularizer_h,
    scattering_length,
    verify_scaling,
)

__all__ = [
    "ConsistencyError",
    "DomainError",
    "KernelEvalConfig",
    "MagnitudeOverflowError",
    "QuadratureError",
    "SignedLog",
    "free_kernel",
    "free_kernel_radial",
    "interaction_bracket",
    "interaction_kernel",
    "interaction_kernel_log",
    "laplace_tail_integral",
    "laplace_tail_integral_quad",
    "regularizer_h",
    "scattering_length",
    "verify_scaling",
]
