"""Three-marginal instance on which the single-entry search rule stalls.

Points 1, 2, 3 are stored as indices 0, 1, 2.  The cost is 0 on the
diagonal, 1 when all three entries differ and 2 otherwise.  The cyclic plan
``gamma0`` has cost 1; every one-entry mutation of its support costs 2, so
GenCol with single-entry proposals can never leave it, although the diagonal
plan ``gamma_star`` has cost 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Configuration, CostSpec, DiscreteMarginal, Problem, SparsePlan, plan_cost
from .gencol import candidate_children
from .reduced_lp import solve_reduced

# Listed in the original 1-based labels; converted below.
_LISTED_PROPOSALS_1BASED = (
    (1, 2, 2), (1, 3, 3), (2, 2, 3), (3, 2, 3), (2, 1, 1), (2, 2, 1), (2, 3, 2), (2, 3, 3),
    (1, 3, 1), (3, 3, 1), (3, 2, 2), (3, 3, 2), (3, 1, 1), (3, 1, 3), (1, 1, 2), (2, 1, 2),
)  # fmt: skip


def counterexample_cost_values(idx: np.ndarray) -> np.ndarray:
    idx = np.asarray(idx).reshape(-1, 3)
    a, b, c = idx[:, 0], idx[:, 1], idx[:, 2]
    all_equal = (a == b) & (b == c)
    all_distinct = (a != b) & (a != c) & (b != c)
    return np.where(all_equal, 0.0, np.where(all_distinct, 1.0, 2.0))


def counterexample_problem() -> Problem:
    table = counterexample_cost_values(np.indices((3, 3, 3)).reshape(3, -1).T).reshape(3, 3, 3)
    cost = CostSpec((3, 3, 3), table=table, name="counterexample")
    return Problem(tuple(DiscreteMarginal.uniform(3) for _ in range(3)), cost)


@dataclass(frozen=True)
class CounterexampleFixture:
    problem: Problem
    gamma0: SparsePlan
    gamma_star: SparsePlan
    one_entry_proposals: tuple[Configuration, ...]

    def all_one_entry_mutations(self) -> list[Configuration]:
        """Every single-entry child of every configuration in ``supp(gamma0)``, sorted."""
        out: set[Configuration] = set()
        for parent in self.gamma0.support:
            for child in candidate_children(parent, "single_entry", self.problem.sizes).tolist():
                out.add(tuple(child))
        return sorted(out)


def build_fixture() -> CounterexampleFixture:
    third = 1.0 / 3.0
    gamma0 = SparsePlan({(0, 1, 2): third, (1, 2, 0): third, (2, 0, 1): third})
    gamma_star = SparsePlan({(0, 0, 0): third, (1, 1, 1): third, (2, 2, 2): third})
    proposals = tuple(tuple(v - 1 for v in p) for p in _LISTED_PROPOSALS_1BASED)
    return CounterexampleFixture(counterexample_problem(), gamma0, gamma_star, proposals)


def with_cost(fixture: CounterexampleFixture, config: Configuration, value: float) -> CounterexampleFixture:
    """Copy of the fixture with a single cost entry changed."""
    table = np.array(fixture.problem.cost.table)
    table[tuple(config)] = value
    problem = Problem(fixture.problem.marginals, CostSpec(table.shape, table=table, name="counterexample-modified"))
    return CounterexampleFixture(problem, fixture.gamma0, fixture.gamma_star, fixture.one_entry_proposals)


def verify_stationarity(fixture: CounterexampleFixture) -> bool:
    """True iff no set of one-entry mutations of ``supp(gamma0)`` can move the reduced optimum off ``gamma0``.

    Checks that the listed proposals are genuine mutations, that every
    mutation costs 2, and that the reduced problem on the support plus all
    mutations still returns ``gamma0`` at the same cost (any smaller subset
    then does as well).
    """
    cost = fixture.problem.cost
    support = set(fixture.gamma0.support)
    mutations = fixture.all_one_entry_mutations()
    if not set(fixture.one_entry_proposals) <= set(mutations) | support:
        return False
    if any(cost(r) != 2.0 for r in mutations):
        return False
    base = plan_cost(fixture.gamma0, cost)
    sol = solve_reduced([*fixture.gamma0.support, *mutations], fixture.problem.marginals, cost)
    if abs(sol.objective - base) > cost.tol:
        return False
    return set(sol.plan.support) == support
