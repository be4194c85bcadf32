"""Exact selective inference with Gaussian randomization.

Randomized feature selection (lasso, marginal screening, sorted-l1), the
closed-form exact pivot obtained by reducing the selection event to a
bivariate truncated Gaussian, confidence intervals from pivot inversion, and
a Monte-Carlo study harness with polyhedral, data-splitting, and
response-splitting baselines.
"""

from .conditioning import (
    ConditioningGeometry,
    TargetSpec,
    a_eta,
    build_geometry,
    build_target,
    conditional_variance_given_eta,
)
from .errors import ExactSIError
from .inference import (
    IntervalEstimate,
    PivotParams,
    carving_pivot_params,
    exact_pivot,
    invert_pivot,
    lambda_delta,
    pivot_params,
    plug_in_sigma2,
    polyhedral_interval,
    polyhedral_pivot,
    split_inference,
    uv_inference,
)
from .numerics import (
    DEFAULT_QUADRATURE,
    Interval,
    QuadratureSpec,
    gaussian_cdf,
    integrate_weighted_gaussian,
    invert_monotone,
    log_truncation_prob,
    truncation_prob,
)
from .selection import (
    Dataset,
    LinearEventRep,
    RandomizationScheme,
    SelectionOutcome,
    bootstrap_reporting_problem,
    lasso_event_rep,
    lee_event_rep,
    prox_sorted_l1,
    sample_randomization,
    solve_randomized_lasso,
    solve_randomized_screening,
    solve_randomized_slope,
    tau2_from_split,
)
from .study import (
    SimConfig,
    StudySummary,
    f1_score,
    fcr,
    generate_design,
    generate_response,
    run_study,
    true_projected_target,
    validate_pivot_uniformity,
)

__version__ = "0.1.0"

__all__ = [
    "ConditioningGeometry",
    "DEFAULT_QUADRATURE",
    "Dataset",
    "ExactSIError",
    "Interval",
    "IntervalEstimate",
    "LinearEventRep",
    "PivotParams",
    "QuadratureSpec",
    "RandomizationScheme",
    "SelectionOutcome",
    "SimConfig",
    "StudySummary",
    "TargetSpec",
    "a_eta",
    "bootstrap_reporting_problem",
    "build_geometry",
    "build_target",
    "carving_pivot_params",
    "conditional_variance_given_eta",
    "exact_pivot",
    "f1_score",
    "fcr",
    "gaussian_cdf",
    "generate_design",
    "generate_response",
    "integrate_weighted_gaussian",
    "invert_monotone",
    "invert_pivot",
    "lambda_delta",
    "lasso_event_rep",
    "lee_event_rep",
    "log_truncation_prob",
    "pivot_params",
    "plug_in_sigma2",
    "polyhedral_interval",
    "polyhedral_pivot",
    "prox_sorted_l1",
    "run_study",
    "sample_randomization",
    "solve_randomized_lasso",
    "solve_randomized_screening",
    "solve_randomized_slope",
    "split_inference",
    "tau2_from_split",
    "true_projected_target",
    "truncation_prob",
    "uv_inference",
    "validate_pivot_uniformity",
]
