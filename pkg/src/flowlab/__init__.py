"""Deterministic interpolant flows with verifiable transport-error bounds."""

from .bounds import (
    BoundReport,
    THEOREMS,
    big_c,
    kt_profile,
    make_bound_report,
    optimal_gamma_min,
    optimal_total_bound,
    recompute_rhs,
    rhs_corollary_4_3,
    rhs_theorem_3_1,
    rhs_theorem_3_2,
    rhs_theorem_3_8,
    rhs_theorem_3_9,
    rhs_theorem_4_4,
    total_bound_at,
)
from .config import ExperimentConfig, load_config
from .errors import (
    ConfigError,
    DomainError,
    MixtureSizeError,
    PreconditionError,
    QuadratureError,
    StiffnessError,
)
from .experiments import (
    RunReport,
    audit_bound_reports,
    run_bound_suite,
    run_gradcheck,
    run_pfode_suite,
    run_regularity,
    run_scaling_study,
    run_w2,
    write_report,
)
from .flow import (
    FlowResult,
    SolverSpec,
    alekseev_grobner_residual,
    integrate,
    integrate_with_jacobian,
    marginal_law_check,
)
from .metrics import TransportResult, coupled_w2_upper, operator_norm, w2_empirical
from .mixtures import (
    GaussianMixture,
    combine_independent,
    effective_support_radius,
    interpolant_marginal,
    relax_boundary,
    single_gaussian,
    standard_normal,
)
from .regularity import (
    RegularityEstimate,
    RegularityProfile,
    estimate_lambda,
    high_probability_cov_check,
    interpolant_marginal_regularity,
    lambda_certificate,
    noise_posterior_covariance,
)
from .rng import stream
from .schedules import (
    Coefficients,
    Schedule,
    ScheduleIntegrals,
    custom,
    eval_coefficients,
    generic_concave,
    log_gamma_total_variation,
    schedule_integrals,
    ve,
    vp,
)
from .velocity import (
    ExactVelocityField,
    L2ErrorResult,
    LipschitzProfile,
    PerturbedVelocityField,
    l2_error,
    lipschitz_profile,
    objective_gap_check,
)

__version__ = "0.1.0"

__all__ = [
    "BoundReport",
    "Coefficients",
    "ConfigError",
    "DomainError",
    "ExactVelocityField",
    "ExperimentConfig",
    "FlowResult",
    "GaussianMixture",
    "L2ErrorResult",
    "LipschitzProfile",
    "MixtureSizeError",
    "PerturbedVelocityField",
    "PreconditionError",
    "QuadratureError",
    "RegularityEstimate",
    "RegularityProfile",
    "RunReport",
    "Schedule",
    "ScheduleIntegrals",
    "SolverSpec",
    "StiffnessError",
    "THEOREMS",
    "TransportResult",
    "alekseev_grobner_residual",
    "audit_bound_reports",
    "big_c",
    "combine_independent",
    "coupled_w2_upper",
    "custom",
    "effective_support_radius",
    "estimate_lambda",
    "eval_coefficients",
    "generic_concave",
    "high_probability_cov_check",
    "integrate",
    "integrate_with_jacobian",
    "interpolant_marginal",
    "interpolant_marginal_regularity",
    "kt_profile",
    "l2_error",
    "lambda_certificate",
    "lipschitz_profile",
    "load_config",
    "log_gamma_total_variation",
    "make_bound_report",
    "marginal_law_check",
    "noise_posterior_covariance",
    "objective_gap_check",
    "operator_norm",
    "optimal_gamma_min",
    "optimal_total_bound",
    "recompute_rhs",
    "relax_boundary",
    "rhs_corollary_4_3",
    "rhs_theorem_3_1",
    "rhs_theorem_3_2",
    "rhs_theorem_3_8",
    "rhs_theorem_3_9",
    "rhs_theorem_4_4",
    "run_bound_suite",
    "run_gradcheck",
    "run_pfode_suite",
    "run_regularity",
    "run_scaling_study",
    "run_w2",
    "schedule_integrals",
    "single_gaussian",
    "standard_normal",
    "stream",
    "total_bound_at",
    "ve",
    "vp",
    "w2_empirical",
    "write_report",
]
