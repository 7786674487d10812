"""Problem model for discrete (multi-marginal) optimal transport.

Marginals, costs, sparse plans and dual potentials, plus the small amount of
arithmetic every other module needs (plan marginals, plan cost, gain).
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

TOL_MASS = 1e-9
DENSE_GUARD = 10**6

Configuration = tuple[int, ...]


class MalformedPlanError(ValueError):
    """A plan references indices outside the marginal supports or has bad masses."""


def lp_tolerance(scale: float) -> float:
    """Optimality/slackness tolerance for a cost with sup-norm ``scale``."""
    return 1e-9 * (1.0 + scale)


@dataclass(frozen=True)
class DiscreteMarginal:
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).ravel()
        if w.size == 0:
            raise ValueError("marginal must have at least one support point")
        if not np.all(np.isfinite(w)):
            raise ValueError("marginal weights must be finite")
        if np.any(w <= 0.0):
            bad = int(np.flatnonzero(w <= 0.0)[0])
            raise ValueError(f"marginal weight at index {bad} is {w[bad]!r}; weights must be strictly positive")
        if abs(w.sum() - 1.0) > TOL_MASS:
            raise ValueError(f"marginal weights sum to {w.sum()!r}, expected 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.weights.size

    @classmethod
    def uniform(cls, n: int) -> DiscreteMarginal:
        return cls(np.full(n, 1.0 / n))


class CostSpec:
    """Cost on the product of N finite index sets.

    Either a dense table (any arity, practical for small products) or a
    vectorized ``func`` mapping a ``(K, N)`` integer array to ``K`` costs.
    ``scale`` is the sup-norm ``|c|_inf`` used for tolerances; it is computed
    by enumeration when not supplied and the product is small enough.
    """

    def __init__(
        self,
        sizes: Sequence[int],
        *,
        table: np.ndarray | None = None,
        func: Callable[[np.ndarray], np.ndarray] | None = None,
        scale: float | None = None,
        name: str = "custom",
    ):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise ValueError("cost arity must be at least 2")
        if any(s < 1 for s in self.sizes):
            raise ValueError("every axis needs at least one point")
        if (table is None) == (func is None):
            raise ValueError("give exactly one of table or func")
        self.name = name
        self.table = None
        self._func = func
        if table is not None:
            t = np.array(table, dtype=float)
            if t.shape != self.sizes:
                raise ValueError(f"cost table shape {t.shape} does not match sizes {self.sizes}")
            if not np.all(np.isfinite(t)):
                raise ValueError("cost table contains non-finite entries")
            t.setflags(write=False)
            self.table = t
        if scale is None:
            if self.table is not None:
                scale = float(np.abs(self.table).max())
            elif self.product_size <= DENSE_GUARD:
                scale = float(np.abs(self.batch(all_configurations(self.sizes))).max())
            else:
                raise ValueError("scale must be given for functional costs on large products")
        self.scale = float(scale)

    @property
    def arity(self) -> int:
        return len(self.sizes)

    @property
    def product_size(self) -> int:
        return math.prod(self.sizes)

    def batch(self, idx: np.ndarray) -> np.ndarray:
        """Costs of the configurations in the rows of ``idx``."""
        idx = np.asarray(idx, dtype=np.int64).reshape(-1, self.arity)
        if self.table is not None:
            return self.table[tuple(idx.T)]
        out = np.asarray(self._func(idx), dtype=float).reshape(-1)
        if out.shape[0] != idx.shape[0]:
            raise ValueError("cost function returned the wrong number of values")
        return out

    def __call__(self, config: Iterable[int]) -> float:
        return float(self.batch(np.array([tuple(config)]))[0])

    def dense(self) -> np.ndarray:
        """Full cost tensor (refused above ``DENSE_GUARD`` cells)."""
        if self.table is not None:
            return self.table
        if self.product_size > DENSE_GUARD:
            raise ValueError(f"product size {self.product_size} exceeds dense guard {DENSE_GUARD}")
        return self.batch(all_configurations(self.sizes)).reshape(self.sizes)

    @property
    def tol(self) -> float:
        return lp_tolerance(self.scale)


@dataclass(frozen=True)
class Problem:
    marginals: tuple[DiscreteMarginal, ...]
    cost: CostSpec

    def __post_init__(self):
        object.__setattr__(self, "marginals", tuple(self.marginals))
        if tuple(m.size for m in self.marginals) != self.cost.sizes:
            raise ValueError(
                f"marginal sizes {[m.size for m in self.marginals]} do not match cost sizes {list(self.cost.sizes)}"
            )

    @property
    def sizes(self) -> tuple[int, ...]:
        return self.cost.sizes

    @property
    def n_marginals(self) -> int:
        return len(self.marginals)

    @property
    def tol(self) -> float:
        return self.cost.tol


@dataclass(frozen=True)
class SparsePlan:
    """Finitely supported transport plan: configuration -> strictly positive mass."""

    entries: Mapping[Configuration, float] = field(default_factory=dict)

    def __post_init__(self):
        clean: dict[Configuration, float] = {}
        for cfg, mass in self.entries.items():
            cfg = tuple(int(i) for i in cfg)
            mass = float(mass)
            if not mass > 0.0 or not math.isfinite(mass):
                raise MalformedPlanError(f"mass {mass!r} at {cfg} is not strictly positive")
            if cfg in clean:
                raise MalformedPlanError(f"duplicate configuration {cfg}")
            clean[cfg] = mass
        if clean and len({len(c) for c in clean}) != 1:
            raise MalformedPlanError("configurations of differing arity")
        if abs(sum(clean.values()) - 1.0) > TOL_MASS:
            raise MalformedPlanError(f"total mass {sum(clean.values())!r} differs from 1")
        object.__setattr__(self, "entries", clean)

    @property
    def support(self) -> list[Configuration]:
        return list(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, cfg) -> bool:
        return tuple(cfg) in self.entries

    def items(self):
        return self.entries.items()

    def total_mass(self) -> float:
        return math.fsum(self.entries.values())

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Support as a ``(K, N)`` int array and masses as a ``(K,)`` array."""
        cfgs = list(self.entries)
        idx = np.array(cfgs, dtype=np.int64).reshape(len(cfgs), -1)
        return idx, np.array([self.entries[c] for c in cfgs])

    def mix(self, other: SparsePlan, alpha: float) -> SparsePlan:
        """Convex combination ``alpha*self + (1-alpha)*other`` with merged supports."""
        out: dict[Configuration, float] = {}
        for cfg, m in self.entries.items():
            out[cfg] = out.get(cfg, 0.0) + alpha * m
        for cfg, m in other.entries.items():
            out[cfg] = out.get(cfg, 0.0) + (1.0 - alpha) * m
        return SparsePlan({c: m for c, m in out.items() if m > 0.0})


@dataclass(frozen=True, eq=False)
class DualPotentials:
    potentials: tuple[np.ndarray, ...]

    def __post_init__(self):
        pots = []
        for p in self.potentials:
            a = np.array(p, dtype=float).ravel()
            a.setflags(write=False)
            pots.append(a)
        object.__setattr__(self, "potentials", tuple(pots))

    def __getitem__(self, i: int) -> np.ndarray:
        return self.potentials[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, DualPotentials) or len(other) != len(self):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.potentials, other.potentials))

    __hash__ = None

    def __len__(self) -> int:
        return len(self.potentials)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(p.size for p in self.potentials)

    def sum_at(self, idx: np.ndarray) -> np.ndarray:
        """``sum_i u_i(r_i)`` for every row ``r`` of ``idx``."""
        idx = np.asarray(idx, dtype=np.int64).reshape(-1, len(self.potentials))
        total = np.zeros(idx.shape[0])
        for axis, u in enumerate(self.potentials):
            total += u[idx[:, axis]]
        return total

    def normalized(self) -> DualPotentials:
        """Fix the gauge: ``u_i(0) = 0`` for every axis but the last, which absorbs the shift."""
        pots = [p.copy() for p in self.potentials]
        for i in range(len(pots) - 1):
            shift = pots[i][0]
            pots[i] = pots[i] - shift
            pots[-1] = pots[-1] + shift
        return DualPotentials(tuple(pots))


def all_configurations(sizes: Sequence[int]) -> np.ndarray:
    """Every configuration of the product space, lexicographic, as a ``(prod, N)`` array."""
    grids = np.indices(tuple(sizes)).reshape(len(sizes), -1)
    return np.ascontiguousarray(grids.T)


def iter_configurations(sizes: Sequence[int]) -> Iterable[Configuration]:
    return itertools.product(*(range(s) for s in sizes))


def _check_in_range(idx: np.ndarray, sizes: Sequence[int]) -> None:
    if idx.size == 0:
        return
    if idx.shape[1] != len(sizes):
        raise MalformedPlanError(f"plan arity {idx.shape[1]} does not match {len(sizes)} marginals")
    upper = np.asarray(sizes)
    bad = np.any((idx < 0) | (idx >= upper), axis=1)
    if bad.any():
        raise MalformedPlanError(f"configuration {tuple(idx[np.argmax(bad)])} out of range for sizes {tuple(sizes)}")


def plan_marginals(plan: SparsePlan, sizes: Sequence[int]) -> list[np.ndarray]:
    idx, mass = plan.arrays()
    _check_in_range(idx, sizes)
    out = []
    for axis, n in enumerate(sizes):
        if idx.size == 0:
            out.append(np.zeros(n))
        else:
            out.append(np.bincount(idx[:, axis], weights=mass, minlength=n).astype(float))
    return out


def marginal_error(plan: SparsePlan, marginals: Sequence[DiscreteMarginal]) -> float:
    """Largest absolute deviation between the plan's marginals and the targets."""
    sizes = [m.size for m in marginals]
    return max(float(np.abs(p - m.weights).max()) for p, m in zip(plan_marginals(plan, sizes), marginals))


def plan_cost(plan: SparsePlan, cost: CostSpec) -> float:
    if len(plan) == 0:
        return 0.0
    idx, mass = plan.arrays()
    if idx.shape[1] != cost.arity:
        raise ValueError(f"plan arity {idx.shape[1]} does not match cost arity {cost.arity}")
    return math.fsum(cost.batch(idx) * mass)


def gain(u: DualPotentials, r: Iterable[int], cost: CostSpec) -> float:
    """``sum_i u_i(r_i) - c(r)``; positive means ``r`` violates the full dual constraint."""
    r = tuple(r)
    if len(r) != len(u) or len(r) != cost.arity:
        raise ValueError("configuration, potentials and cost arity differ")
    return math.fsum(float(u[i][x]) for i, x in enumerate(r)) - cost(r)


def gains(u: DualPotentials, idx: np.ndarray, cost: CostSpec) -> np.ndarray:
    """Vectorized :func:`gain` over the rows of ``idx``."""
    idx = np.asarray(idx, dtype=np.int64).reshape(-1, cost.arity)
    return u.sum_at(idx) - cost.batch(idx)


def dual_objective(u: DualPotentials, marginals: Sequence[DiscreteMarginal]) -> float:
    if len(u) != len(marginals):
        raise ValueError("potentials and marginals differ in count")
    return math.fsum(float(np.dot(m.weights, p)) for m, p in zip(marginals, u.potentials))


def support_bound(sizes: Sequence[int]) -> int:
    """Maximal support size of an extreme plan, ``1 + sum(l_i - 1)``."""
    return 1 + sum(s - 1 for s in sizes)
