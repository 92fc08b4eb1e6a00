"""Exact finite-state analysis of pseudo-marginal Metropolis-Hastings kernels."""

from .weightdist import (
    CxVerdict,
    DiscreteDistribution,
    SimplexWeights,
    averaged_law,
    convex_order_leq,
    diatomic,
    majorizes,
    stop_loss,
)
from .coupling import MartingaleCoupling, build_martingale_coupling, verify_martingale_coupling
from .chains import (
    FiniteKernel,
    MarginalChain,
    acceptance_rates,
    augment_kernel,
    breve_kernels,
    marginal_mh_kernel,
    pseudo_marginal_kernel,
    ring_kernel,
)
from .spectral import asymptotic_variance, dirichlet_form, spectral_gaps

__version__ = "0.1.0"

__all__ = [
    "CxVerdict", "DiscreteDistribution", "SimplexWeights", "averaged_law", "convex_order_leq",
    "diatomic", "majorizes", "stop_loss", "MartingaleCoupling", "build_martingale_coupling",
    "verify_martingale_coupling", "FiniteKernel", "MarginalChain", "acceptance_rates",
    "augment_kernel", "breve_kernels", "marginal_mh_kernel", "pseudo_marginal_kernel",
    "ring_kernel", "asymptotic_variance", "dirichlet_form", "spectral_gaps",
]
