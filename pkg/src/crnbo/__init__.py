"""Bayesian optimization over (solution, seed) pairs with common random numbers."""

__version__ = "0.1.0"

from .acquisition import (
    AcquisitionSpace,
    DiscretizationSet,
    build_discretization,
    expected_max_affine,
    kg_crn,
    kg_crn_gradient,
    kg_pw,
    sigma_tilde,
)
from .acqopt import OptimizerConfig, optimize_kg_crn, select_pw_mode
from .designs import BoxDomain, FiniteDomain, LatticeDomain
from .errors import (
    ConditioningError,
    DegenerateCandidateError,
    FittingError,
    InvalidInputError,
)
from .gp import (
    CrnHyperparams,
    Dataset,
    Posterior,
    fit_posterior,
    posterior_cov,
    posterior_mean,
    prior_kernel,
    prior_posterior,
    target_cov,
    target_mean,
)
from .harness import ExperimentConfig, run_experiment
from .hyperfit import (
    FitBounds,
    FitConfig,
    FitPlan,
    fit_hyperparams,
    fit_stage1_independent,
    fit_stage2_split,
    fit_stage3_joint,
    log_marginal_likelihood,
    refit_schedule,
)
from .loop import POLICIES, LoopConfig, PolicyVariant, RunRecord, initialize, recommend, run
from .metrics import heldout_value, opportunity_cost, seed_reuse
from .simulators import (
    AisConfig,
    AtoConfig,
    SyntheticGpConfig,
    ais_eval,
    ato_eval,
    make_simulator,
    synthetic_gp_eval,
    synthetic_gp_truth,
)
