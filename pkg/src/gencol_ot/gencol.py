"""Genetic column generation outer loop.

Each outer step draws a seeded permutation of every (parent, child) pair for
the current reduced solution, accepts the first child with positive gain,
clears the oldest unused configurations if the active set is too large and
re-solves with a warm start.  When the whole permutation is walked without an
acceptance the run has exhausted its proposals.
"""

from __future__ import annotations

import math
import warnings
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .core import Configuration, DualPotentials, Problem, SparsePlan, gains
from .reduced_lp import ActiveSet, ReducedSolution, initial_feasible_set, solve_reduced

Rule = Literal["two_marginal", "single_entry", "many_entry"]
RULES: tuple[str, ...] = ("two_marginal", "single_entry", "many_entry")


class UncertifiedBetaWarning(UserWarning):
    pass


@dataclass(frozen=True)
class GenColConfig:
    beta: float = 3.0
    rule: Rule | None = None
    seed: int = 0
    max_outer_iterations: int = 10_000
    accept_tol: float | None = None

    def __post_init__(self):
        if not self.beta > 1.0:
            raise ValueError(f"beta must exceed 1, got {self.beta}")
        if self.rule is not None and self.rule not in RULES:
            raise ValueError(f"unknown search rule {self.rule!r}")
        if self.max_outer_iterations < 0:
            raise ValueError("max_outer_iterations must be nonnegative")

    @property
    def certified_beta(self) -> bool:
        return self.beta >= 2.0

    def resolve_rule(self, n_marginals: int) -> str:
        rule = self.rule
        if rule is None:
            rule = "two_marginal" if n_marginals == 2 else "single_entry"
        if rule == "two_marginal" and n_marginals != 2:
            raise ValueError("the two_marginal rule needs exactly two marginals")
        return rule


@dataclass(frozen=True)
class SolveReport:
    final_plan: SparsePlan
    final_potentials: DualPotentials
    objective_trajectory: list[tuple[int, float]]
    active_set_sizes: list[int]
    termination: Literal["exhausted_proposals", "max_iterations"]
    certificate: Literal["certified_optimal", "uncertified", "stationary_under_rule"]
    rng_seed: int
    rule: str
    beta: float
    size_bound: int
    accepted: list[tuple[int, Configuration, float]] = field(default_factory=list)
    violator: tuple[Configuration, float] | None = None
    support_sizes: list[int] = field(default_factory=list)

    @property
    def objective(self) -> float:
        return self.objective_trajectory[-1][1]


def size_bound(beta: float, sizes: Sequence[int]) -> int:
    """Largest admissible active set, ``ceil(beta * sum(l_i))``."""
    return math.ceil(beta * sum(sizes) - 1e-12)


def candidate_children(parent: Sequence[int], rule: str, sizes: Sequence[int]) -> np.ndarray:
    """All children of ``parent`` under ``rule``, parent excluded, as a ``(K, N)`` array.

    Rows are grouped by the first axis on which the child agrees with (many
    entry) or differs from (single entry) the parent; no row repeats.
    """
    parent = np.asarray(parent, dtype=np.int64)
    n = len(sizes)
    if parent.shape != (n,) or np.any(parent < 0) or np.any(parent >= np.asarray(sizes)):
        raise ValueError(f"parent {tuple(parent)} out of range for sizes {tuple(sizes)}")
    if rule == "two_marginal" and n != 2:
        raise ValueError("the two_marginal rule needs exactly two marginals")
    blocks = []
    if rule in ("two_marginal", "single_entry"):
        for axis in range(n):
            values = np.arange(sizes[axis])
            values = values[values != parent[axis]]
            block = np.repeat(parent[None, :], values.size, axis=0)
            block[:, axis] = values
            blocks.append(block)
    elif rule == "many_entry":
        # block i: agrees with the parent on axis i and differs on every earlier axis
        for axis in range(n):
            ranges = []
            for a in range(n):
                r = np.arange(sizes[a])
                if a < axis:
                    r = r[r != parent[a]]
                elif a == axis:
                    r = parent[a : a + 1]
                ranges.append(r)
            if any(r.size == 0 for r in ranges):
                continue
            mesh = np.meshgrid(*ranges, indexing="ij")
            blocks.append(np.stack([g.ravel() for g in mesh], axis=1))
        cand = np.concatenate(blocks)
        return cand[np.any(cand != parent, axis=1)]
    else:
        raise ValueError(f"unknown search rule {rule!r}")
    return np.concatenate(blocks)


def propose_children(parent: Sequence[int], rule: str, sizes: Sequence[int], rng: np.random.Generator):
    """Yield every child of ``parent`` once, in a uniformly random order."""
    cand = candidate_children(parent, rule, sizes)
    for i in rng.permutation(len(cand)):
        yield tuple(int(v) for v in cand[i])


def _pair_space(parents: Sequence[Configuration], rule: str, sizes: Sequence[int]) -> np.ndarray:
    return np.concatenate([candidate_children(p, rule, sizes) for p in parents])


def tail_clear(
    omega: ActiveSet,
    current_plan: SparsePlan,
    beta: float,
    sizes: Sequence[int],
    protected: Iterable[Configuration] = (),
) -> ActiveSet:
    """Drop up to ``sum(sizes)`` of the longest-unused configurations once ``omega`` exceeds the bound.

    Support of ``current_plan`` and anything in ``protected`` (the basis, a
    freshly accepted child) is never removed.
    """
    if len(omega) <= size_bound(beta, sizes):
        return omega
    keep = set(current_plan.support) | {tuple(r) for r in protected}
    removable = sorted(
        (r for r in omega if r not in keep),
        key=lambda r: (omega.last_active[r], omega.serial(r)),
    )
    out = omega.copy()
    for r in removable[: sum(sizes)]:
        out.remove(r)
    return out


@dataclass
class GenColState:
    problem: Problem
    config: GenColConfig
    rule: str
    omega: ActiveSet
    solution: ReducedSolution
    iteration: int = 0
    terminated: bool = False
    trajectory: list[tuple[int, float]] = field(default_factory=list)
    omega_sizes: list[int] = field(default_factory=list)
    support_sizes: list[int] = field(default_factory=list)
    accepted: list[tuple[int, Configuration, float]] = field(default_factory=list)

    @property
    def accept_tol(self) -> float:
        if self.config.accept_tol is not None:
            return self.config.accept_tol
        return self.problem.tol

    @property
    def bound(self) -> int:
        return size_bound(self.config.beta, self.problem.sizes)


def init_state(
    problem: Problem,
    config: GenColConfig,
    initial: ActiveSet | Iterable[Sequence[int]] | None = None,
) -> GenColState:
    rule = config.resolve_rule(problem.n_marginals)
    if not config.certified_beta:
        warnings.warn(f"beta={config.beta} < 2: convergence is not guaranteed", UncertifiedBetaWarning, stacklevel=2)
    if initial is None:
        omega = initial_feasible_set(problem.marginals)
    elif isinstance(initial, ActiveSet):
        omega = initial.copy()
    else:
        omega = ActiveSet(initial)
    sol = solve_reduced(omega, problem.marginals, problem.cost)
    omega.touch(sol.plan.support, 0)
    bound = size_bound(config.beta, problem.sizes)
    while len(omega) > bound:
        omega = tail_clear(omega, sol.plan, config.beta, problem.sizes, sol.basis.configs)
        sol = solve_reduced(omega, problem.marginals, problem.cost, warm=sol.basis)
    state = GenColState(problem=problem, config=config, rule=rule, omega=omega, solution=sol)
    state.trajectory.append((0, sol.objective))
    state.omega_sizes.append(len(omega))
    state.support_sizes.append(len(sol.plan))
    return state


def find_child(state: GenColState, rng: np.random.Generator) -> tuple[Configuration, float] | None:
    """Walk a random permutation of all (parent, child) pairs; first child with positive gain, or None."""
    parents = sorted(state.solution.plan.support)
    children = _pair_space(parents, state.rule, state.problem.sizes)
    order = rng.permutation(len(children))
    g = gains(state.solution.potentials, children, state.problem.cost)
    fresh = np.fromiter((tuple(c) not in state.omega for c in children.tolist()), dtype=bool, count=len(children))
    ok = (g > state.accept_tol) & fresh
    hits = np.flatnonzero(ok[order])
    if hits.size == 0:
        return None
    k = order[hits[0]]
    return tuple(int(v) for v in children[k]), float(g[k])


def gencol_step(state: GenColState, rng: np.random.Generator) -> GenColState:
    """One outer iteration; marks ``state.terminated`` when all offspring were tried."""
    if state.terminated:
        return state
    found = find_child(state, rng)
    if found is None:
        state.terminated = True
        return state
    child, child_gain = found
    it = state.iteration + 1
    omega = state.omega
    omega.add(child, it)
    sol = state.solution
    omega = tail_clear(omega, sol.plan, state.config.beta, state.problem.sizes, [*sol.basis.configs, child])
    new = solve_reduced(omega, state.problem.marginals, state.problem.cost, warm=sol.basis)
    omega.touch(new.plan.support, it)
    state.omega = omega
    state.solution = new
    state.iteration = it
    state.accepted.append((it, child, child_gain))
    state.trajectory.append((it, new.objective))
    state.omega_sizes.append(len(omega))
    state.support_sizes.append(len(new.plan))
    return state


def run(
    problem: Problem,
    config: GenColConfig = GenColConfig(),
    initial: ActiveSet | Iterable[Sequence[int]] | None = None,
    *,
    certify: bool = True,
) -> SolveReport:
    """Run GenCol to exhaustion or the iteration cap."""
    rng = np.random.default_rng(config.seed)
    state = init_state(problem, config, initial)
    while not state.terminated and state.iteration < config.max_outer_iterations:
        gencol_step(state, rng)
    if not state.terminated:
        # the cap may coincide with a stationary point; one more sweep decides
        state.terminated = find_child(state, np.random.default_rng(config.seed)) is None
    termination = "exhausted_proposals" if state.terminated else "max_iterations"

    certificate, violator = "uncertified", None
    if certify:
        from .oracle import SizeGuardError, certify_full_dual_feasibility

        try:
            violator = certify_full_dual_feasibility(state.solution.potentials, problem.cost, state.accept_tol)
        except SizeGuardError:
            pass
        else:
            if violator is None:
                certificate = "certified_optimal"
            elif termination == "exhausted_proposals":
                certificate = "stationary_under_rule"

    return SolveReport(
        final_plan=state.solution.plan,
        final_potentials=state.solution.potentials,
        objective_trajectory=list(state.trajectory),
        active_set_sizes=list(state.omega_sizes),
        termination=termination,
        certificate=certificate,
        rng_seed=config.seed,
        rule=state.rule,
        beta=config.beta,
        size_bound=state.bound,
        accepted=list(state.accepted),
        violator=violator,
        support_sizes=list(state.support_sizes),
    )
