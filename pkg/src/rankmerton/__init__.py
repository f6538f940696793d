"""Rank-based market models, closed-form optimal consumption-investment, and
numerical verification."""

from __future__ import annotations

from .dynamics import (
    PathBundle,
    SimConfig,
    estimate_local_time,
    load_bundle,
    reflection_from_local_times,
    save_bundle,
    simulate,
    simulate_named,
    simulate_ranked_reflected,
    wealth_path,
)
from .estimate import EstimationResult, collision_drift_estimator, realized_cov
from .model import (
    ConstraintSpec,
    FirstOrderParams,
    MarketState,
    Preferences,
    RankCoefficients,
    rank_of,
    validate,
)
from .strategy import ClosedFormSolution, feedback_strategy, solve
from .verify import hjb_residual, mc_value, neumann_check, optimality_gap, rank_invariance_check

__version__ = "0.1.0"

__all__ = [
    "ClosedFormSolution", "ConstraintSpec", "EstimationResult", "FirstOrderParams",
    "MarketState", "PathBundle", "Preferences", "RankCoefficients", "SimConfig",
    "collision_drift_estimator", "estimate_local_time", "feedback_strategy",
    "hjb_residual", "load_bundle", "mc_value", "neumann_check", "optimality_gap",
    "rank_invariance_check", "rank_of", "realized_cov", "reflection_from_local_times",
    "save_bundle", "simulate", "simulate_named", "simulate_ranked_reflected", "solve",
    "validate", "wealth_path",
]
