"""Genetic column generation for discrete two- and multi-marginal optimal transport."""

from .core import (
    CostSpec,
    DiscreteMarginal,
    DualPotentials,
    Problem,
    SparsePlan,
    dual_objective,
    gain,
    plan_cost,
    plan_marginals,
)
from .reduced_lp import ActiveSet, InfeasibleError, initial_feasible_set, solve_reduced

__all__ = [
    "ActiveSet",
    "CostSpec",
    "DiscreteMarginal",
    "DualPotentials",
    "InfeasibleError",
    "Problem",
    "SparsePlan",
    "dual_objective",
    "gain",
    "initial_feasible_set",
    "plan_cost",
    "plan_marginals",
    "solve_reduced",
]
