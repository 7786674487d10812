"""Ground truth for tests and certificates.

Dense LP on the full product, c-cyclical monotonicity search, full dual
feasibility scan and the extreme-point sparsity audit.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import (
    DENSE_GUARD,
    Configuration,
    CostSpec,
    DualPotentials,
    Problem,
    SparsePlan,
    all_configurations,
    gains,
    support_bound,
)
from .reduced_lp import solve_reduced

_SCAN_CHUNK = 1 << 16


class SizeGuardError(ValueError):
    """The product space is too large for dense enumeration."""


class DenseResult(NamedTuple):
    plan: SparsePlan
    potentials: DualPotentials
    objective: float


def _guard(sizes: Sequence[int]) -> None:
    total = math.prod(sizes)
    if total > DENSE_GUARD:
        raise SizeGuardError(f"product size {total} exceeds the dense guard {DENSE_GUARD}")


def solve_dense_lp(problem: Problem) -> DenseResult:
    """Exact optimum of the full problem (active set = whole product)."""
    _guard(problem.sizes)
    full = [tuple(r) for r in all_configurations(problem.sizes).tolist()]
    sol = solve_reduced(full, problem.marginals, problem.cost)
    return DenseResult(sol.plan, sol.potentials, sol.objective)


@dataclass(frozen=True)
class CcmViolation:
    """``points[i] = (x_i, y_i)``; rerouting to ``(x_i, y_{permutation[i]})`` is strictly cheaper."""

    points: tuple[Configuration, ...]
    permutation: tuple[int, ...]
    original_cost: float
    permuted_cost: float

    @property
    def k(self) -> int:
        return len(self.points)

    @property
    def permuted_points(self) -> tuple[Configuration, ...]:
        return tuple((x, self.points[s][1]) for (x, _), s in zip(self.points, self.permutation))


def _cycles(k: int):
    """Permutations of ``range(k)`` consisting of one k-cycle, canonical order."""
    for rest in itertools.permutations(range(1, k)):
        order = (0, *rest)
        sigma = [0] * k
        for a, b in zip(order, order[1:] + (0,)):
            sigma[a] = b
        yield tuple(sigma)


def check_ccm(
    support: Iterable[Sequence[int]],
    cost: CostSpec,
    max_k: int,
    tol: float | None = None,
) -> CcmViolation | None:
    """Search subsets of size ``2..max_k`` and their cycles for a strictly cheaper rerouting."""
    if cost.arity != 2:
        raise NotImplementedError("cyclical monotonicity check is only defined for two marginals")
    if max_k < 2:
        raise ValueError("max_k must be at least 2")
    tol = cost.tol if tol is None else tol
    pts = sorted({tuple(int(v) for v in r) for r in support})
    if not pts:
        return None
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    C = cost.batch(np.array([(x, y) for x in xs for y in ys])).reshape(len(pts), len(pts))
    diag = np.diag(C)
    for k in range(2, min(max_k, len(pts)) + 1):
        cycles = list(_cycles(k))
        for subset in itertools.combinations(range(len(pts)), k):
            original = math.fsum(diag[list(subset)])
            for sigma in cycles:
                permuted = math.fsum(C[subset[i], subset[sigma[i]]] for i in range(k))
                if permuted < original - tol:
                    return CcmViolation(
                        points=tuple(pts[i] for i in subset),
                        permutation=sigma,
                        original_cost=original,
                        permuted_cost=permuted,
                    )
    return None


def reroute(plan: SparsePlan, violation: CcmViolation) -> SparsePlan:
    """Move the smallest mass on the cycle from ``points`` to ``permuted_points``."""
    delta = min(plan.entries[p] for p in violation.points)
    out = dict(plan.entries)
    for p in violation.points:
        out[p] -= delta
    for q in violation.permuted_points:
        out[q] = out.get(q, 0.0) + delta
    return SparsePlan({c: m for c, m in out.items() if m > 1e-15})


def certify_full_dual_feasibility(
    u: DualPotentials,
    cost: CostSpec,
    accept_tol: float | None = None,
) -> tuple[Configuration, float] | None:
    """Configuration of maximal gain if that gain exceeds ``accept_tol``, else None.

    Ties go to the lexicographically smallest configuration.
    """
    _guard(cost.sizes)
    if u.sizes != cost.sizes:
        raise ValueError(f"potential sizes {u.sizes} do not match cost sizes {cost.sizes}")
    accept_tol = cost.tol if accept_tol is None else accept_tol
    full = all_configurations(cost.sizes)
    best_gain, best_idx = -math.inf, -1
    for start in range(0, len(full), _SCAN_CHUNK):
        g = gains(u, full[start : start + _SCAN_CHUNK], cost)
        i = int(np.argmax(g))
        if g[i] > best_gain:
            best_gain, best_idx = float(g[i]), start + i
    if best_gain > accept_tol:
        return tuple(int(v) for v in full[best_idx]), best_gain
    return None


def audit_sparsity(plan: SparsePlan, sizes: Sequence[int]) -> bool:
    return len(plan) <= support_bound(sizes)
