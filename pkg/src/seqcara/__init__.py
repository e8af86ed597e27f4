"""Sequential estimation for covariate-adjusted response-adaptive trials."""
from .allocation import (
    AllocationAsymptotics,
    AllocationConditionError,
    AllocationDecision,
    TuningConfig,
    UnsupportedRuleError,
    allocate,
    check_allocation_conditions,
    decide_allocation,
    effect_standard_error,
    estimate_allocation_expectation,
    fixed_rule,
    maximize_utility,
    target_probability,
    target_rule,
    tuning_schedule,
    utility,
)
from .engine import (
    MonteCarloSummary,
    Scenario,
    TrialResult,
    TrialState,
    paper_grid,
    paper_scenario,
    run_monte_carlo,
    run_replications,
    run_trial,
    summarize,
)
from .estimation import (
    ArmData,
    ContrastSpec,
    CovarianceEstimate,
    FitResult,
    InfoMatrix,
    InformationDeficientError,
    NonConvergenceError,
    contrast_covariance,
    covariance_estimate,
    fit_arm_mle,
    pooled_information,
    treatment_difference_contrast,
)
from .model import TrueModel, better_arm, draw_covariate, draw_response, mean_response, paper_model
from .numkit import (
    InvalidInputError,
    MixtureNormalSpec,
    NotPositiveDefiniteError,
    RngStream,
    chi_square_quantile,
    invert_spd,
    log_det_spd,
    stream_id_for,
    sym_eig_extremes,
    sym_eigenvalues,
)
from .stopping import StoppingConfig, StoppingVerdict, check_stop, ellipsoid_contains, optimal_sample_size
from ._backend import DEFAULT as DEFAULT_BACKEND, HAVE_COMPILED

__version__ = "0.1.0"
