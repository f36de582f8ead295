"""Lazy follow-the-perturbed-leader for smoothed online learning over
piecewise-continuous losses, with empirical validators for the structural
assumptions (expected contraction, bracket covers, concentration) and a
seeded experiment CLI."""

from .core import (
    ContextSample,
    LossSpec,
    ParamPoint,
    ParamSpace,
    PseudoMetricSpec,
    clamp_to_space,
    eval_rho,
    l1_distance,
)
from .ftpl import (
    EpochSchedule,
    HyperParams,
    OnlineEnvironment,
    RunRecord,
    epoch_of,
    run_lazy_ftpl,
    tune_affine,
    tune_margin,
    tune_planning,
    tune_polynomial,
)
from .oracle import (
    ErmProblem,
    OracleResult,
    best_in_hindsight,
    erm_alternating,
    erm_exact_threshold,
    erm_grid,
)
from .perturbation import (
    PerturbationDraw,
    draw_exponential,
    draw_gaussian_process,
    eval_perturbation,
    sup_perturbation_bound,
)
from .smoothing import (
    AdversaryStrategy,
    SmoothnessClass,
    estimate_directional_smoothness,
    estimate_polynomial_smoothness,
    sample_context,
)

__all__ = [
    "AdversaryStrategy",
    "ContextSample",
    "EpochSchedule",
    "ErmProblem",
    "HyperParams",
    "LossSpec",
    "OnlineEnvironment",
    "OracleResult",
    "ParamPoint",
    "ParamSpace",
    "PerturbationDraw",
    "PseudoMetricSpec",
    "RunRecord",
    "SmoothnessClass",
    "best_in_hindsight",
    "clamp_to_space",
    "draw_exponential",
    "draw_gaussian_process",
    "epoch_of",
    "erm_alternating",
    "erm_exact_threshold",
    "erm_grid",
    "estimate_directional_smoothness",
    "estimate_polynomial_smoothness",
    "eval_perturbation",
    "eval_rho",
    "l1_distance",
    "run_lazy_ftpl",
    "sample_context",
    "sup_perturbation_bound",
    "tune_affine",
    "tune_margin",
    "tune_planning",
    "tune_polynomial",
]

__version__ = "0.1.0"
