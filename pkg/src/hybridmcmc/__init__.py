"""Dimension-robust MCMC for Bayesian inverse problems on function spaces.

Provides the preconditioned Crank-Nicolson sampler and a hybrid adaptive
sampler that runs adaptive Metropolis on the leading Karhunen-Loève modes of
a Gaussian prior and pCN on the rest.
"""

__version__ = "0.1.0"

from .prior import (  # noqa: E402
    Grid,
    KLBasis,
    MaternParams,
    build_matern_covariance,
    kl_decompose,
    matern_prior,
    project,
    reconstruct,
    sample_prior,
    select_J,
)
from .samplers import (  # noqa: E402
    AdaptState,
    Chain,
    HybridConfig,
    PcnConfig,
    beta_from_delta,
    hybrid_log_acceptance,
    hybrid_propose,
    pcn_log_acceptance,
    pcn_propose,
    run_hybrid_chain,
    run_pcn_chain,
    tune_beta,
    update_adaptive_covariance,
)
