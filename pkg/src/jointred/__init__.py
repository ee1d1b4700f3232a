"""Joint parameter and state reduction for Bayesian inverse problems.

Likelihood-informed parameter subspaces, POD/DEIM reduced-order models,
output reduction, capped importance weights and samplers for the resulting
jointly-reduced posteriors.
"""

from .data_reduce import OutputBasis, OutputReducer, output_basis_from_samples, reduced_misfit
from .diagnostics import (
    HellingerReport,
    hellinger_from_log_weights,
    hellinger_gaussian,
    hellinger_grid,
    hellinger_is,
    kl_marginals,
    marginal_tv,
    spectrum_report,
)
from .exceptions import *  # noqa: F401,F403
from .experiments import parameter_sweep, reference_marginal_comparison, state_moment_spectra, state_sweep
from .gaussian import (
    DenseCholesky,
    GaussianMeasure,
    SparsePrecision,
    Spectral,
    build_spde_prior,
    build_squared_exp_prior,
)
from .joint import (
    JointPosterior,
    JointPosteriorApproximation,
    JointSettings,
    build_joint_posterior,
    is_expectation,
    misfit_cap,
    omega_weight,
    posterior_joint_iterate,
    run_posterior_joint,
    upsilon_weight,
)
from .laplace import LaplaceApproximation, find_map
from .models import make_model, synthetic_data
from .param_reduce import (
    LikelihoodInformedSubspace,
    PriorKL,
    ReducedParamBasis,
    estimate_expected_gnh,
    lips_from_expected_gnh,
    prior_kl_basis,
)
from .samplers import Chain, MalaOptions, adaptive_mala, reference_full_mcmc, sample_joint
from .state_reduce import (
    DEIM,
    POD,
    ProjectedModel,
    build_reduced_model,
    collect_snapshots,
    load_reduced_model,
    save_reduced_model,
    deim_build,
    pod_from_snapshots,
    reduced_evaluate,
)

__version__ = "0.1.0"
