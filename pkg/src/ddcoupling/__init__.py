"""Strong Gaussian approximation of density-dependent Markov chains.

Exact simulation of density-dependent chains through KMT-coupled Poisson
channels, the coupled Gaussian fluctuation process, fluid-limit analysis
and the Monte Carlo studies built on them.
"""
__version__ = "0.1.0"

from ._backend import BACKEND
from .analysis import (
    AnalysisError,
    EquilibriumReport,
    Trajectory,
    find_equilibrium,
    flow,
    principal_matrix,
    stationary_covariance,
)
from .kmt import KmtPair, kmt_error, refine_brownian, sample_coupled_pair, validate_tail_bounds
from .model import (
    Domain,
    DomainError,
    Model,
    ModelError,
    PolynomialRate,
    diffusion_matrix,
    drift,
    jacobian,
    load_model,
    make_catalog_model,
    make_custom_model,
)
from .simulate import (
    CoupledPath,
    JumpPath,
    gap_crossing_time,
    simulate_coupled,
    simulate_ctmc,
    simulate_diffusion,
)

__all__ = [
    "__version__", "BACKEND",
    "AnalysisError", "EquilibriumReport", "Trajectory", "find_equilibrium", "flow",
    "principal_matrix", "stationary_covariance",
    "KmtPair", "kmt_error", "refine_brownian", "sample_coupled_pair", "validate_tail_bounds",
    "Domain", "DomainError", "Model", "ModelError", "PolynomialRate", "diffusion_matrix", "drift",
    "jacobian", "load_model", "make_catalog_model", "make_custom_model",
    "CoupledPath", "JumpPath", "gap_crossing_time", "simulate_coupled", "simulate_ctmc", "simulate_diffusion",
]
