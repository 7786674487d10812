"""Exact simplex solver for the transport LP restricted to an active set.

The equality system has one row per (axis, index) pair.  It has ``N - 1``
redundant rows; we drop the row of index 0 on every axis except the last, so
the corresponding potentials are pinned to 0 and the reduced system has full
rank ``m = 1 + sum(l_i - 1)``.

Two basis backends share one primal simplex loop:

* ``TreeBasis`` (two marginals): the basis is a spanning tree on the rows plus
  a ground node (row ``x = 0`` is the ground).  Solves are leaf-to-root and
  root-to-leaf passes, i.e. network simplex.
* ``DenseBasis`` (any arity): explicit ``m x m`` matrix and LU solves.

Artificial columns (unit vectors) are used for phase 1.  An artificial that is
still basic after phase 1 is locked at zero: it leaves the basis as soon as a
pivot direction touches it.
"""

from __future__ import annotations

import math
import warnings
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from .core import (
    TOL_MASS,
    Configuration,
    CostSpec,
    DiscreteMarginal,
    DualPotentials,
    SparsePlan,
    support_bound,
)

_PIVOT_EPS = 1e-10
_ZERO = 1e-13


class InfeasibleError(ValueError):
    """No transport plan is supported on the given configuration set."""


class InternalConsistencyError(RuntimeError):
    """The LP solver reached a state that the problem structure rules out."""


class DuplicateColumnWarning(UserWarning):
    pass


class ActiveSet:
    """Insertion-ordered pool of distinct configurations with age metadata.

    ``last_active[r]`` is the most recent outer iteration in which ``r`` was
    inserted or carried mass; ties in age are broken by insertion serial.
    """

    def __init__(self, configs: Iterable[Sequence[int]] = (), iteration: int = 0):
        self._serial: dict[Configuration, int] = {}
        self.last_active: dict[Configuration, int] = {}
        self._next = 0
        for r in configs:
            self.add(r, iteration, warn=False)

    def add(self, r: Sequence[int], iteration: int = 0, *, warn: bool = True) -> bool:
        """Insert ``r``; returns False (and warns) if it was already present."""
        r = tuple(int(i) for i in r)
        if r in self._serial:
            if warn:
                warnings.warn(f"configuration {r} already active", DuplicateColumnWarning, stacklevel=2)
            return False
        self._serial[r] = self._next
        self._next += 1
        self.last_active[r] = iteration
        return True

    def remove(self, r: Configuration) -> None:
        del self._serial[r]
        del self.last_active[r]

    def touch(self, configs: Iterable[Configuration], iteration: int) -> None:
        for r in configs:
            if r in self._serial:
                self.last_active[r] = iteration

    def serial(self, r: Configuration) -> int:
        return self._serial[r]

    def __contains__(self, r) -> bool:
        return tuple(r) in self._serial

    def __len__(self) -> int:
        return len(self._serial)

    def __iter__(self):
        return iter(self._serial)

    @property
    def configs(self) -> list[Configuration]:
        return list(self._serial)

    def copy(self) -> ActiveSet:
        out = ActiveSet()
        out._serial = dict(self._serial)
        out.last_active = dict(self.last_active)
        out._next = self._next
        return out

    def array(self, arity: int) -> np.ndarray:
        return np.array(self.configs, dtype=np.int64).reshape(len(self), arity)


def add_column(omega: ActiveSet, r: Sequence[int], iteration: int = 0) -> tuple[ActiveSet, bool]:
    """Copy of ``omega`` extended by ``r``; the flag is False for a duplicate."""
    out = omega.copy()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DuplicateColumnWarning)
        added = out.add(r, iteration)
    return out, added


@dataclass(frozen=True)
class Basis:
    """Warm-start state: basic slots (a configuration, or an ``int`` artificial row) and their values."""

    slots: tuple[Configuration | int, ...]
    values: tuple[float, ...]

    @property
    def configs(self) -> list[Configuration]:
        return [s for s in self.slots if isinstance(s, tuple)]

    @property
    def artificial_rows(self) -> list[int]:
        return [s for s in self.slots if not isinstance(s, tuple)]


@dataclass(frozen=True)
class ReducedSolution:
    plan: SparsePlan
    potentials: DualPotentials
    basis: Basis
    objective: float
    pivots: int = 0


class _RowMap:
    """Maps (axis, index) to a row of the reduced constraint system (or -1 when dropped)."""

    def __init__(self, sizes: Sequence[int]):
        self.sizes = tuple(sizes)
        n = len(sizes)
        self.of: list[np.ndarray] = []
        k = 0
        for axis, size in enumerate(sizes):
            rows = np.full(size, -1, dtype=np.int64)
            start = 1 if axis < n - 1 else 0
            rows[start:] = np.arange(k, k + size - start)
            k += size - start
            self.of.append(rows)
        self.m = k
        assert self.m == support_bound(sizes)

    def column_rows(self, idx: np.ndarray) -> np.ndarray:
        """``(K, N)`` row indices of each configuration column, -1 where dropped."""
        return np.stack([self.of[a][idx[:, a]] for a in range(len(self.sizes))], axis=1)

    def rhs(self, marginals: Sequence[DiscreteMarginal]) -> np.ndarray:
        b = np.zeros(self.m)
        for rows, mu in zip(self.of, marginals):
            keep = rows >= 0
            b[rows[keep]] = mu.weights[keep]
        return b

    def potentials(self, y: np.ndarray) -> DualPotentials:
        pots = []
        for rows in self.of:
            u = np.zeros(rows.size)
            keep = rows >= 0
            u[keep] = y[rows[keep]]
            pots.append(u)
        return DualPotentials(tuple(pots))


class DenseBasis:
    """Explicit basis matrix; used for three or more marginals."""

    def __init__(self, m: int, columns: list[np.ndarray]):
        self.m = m
        self.B = np.zeros((m, m))
        for p, rows in enumerate(columns):
            self.set_column(p, rows)

    def set_column(self, p: int, rows: np.ndarray) -> None:
        self.B[:, p] = 0.0
        self.B[rows[rows >= 0], p] = 1.0

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        try:
            return np.linalg.solve(self.B, rhs)
        except np.linalg.LinAlgError as exc:
            raise InternalConsistencyError("singular basis") from exc

    def solve_transpose(self, c: np.ndarray) -> np.ndarray:
        try:
            return np.linalg.solve(self.B.T, c)
        except np.linalg.LinAlgError as exc:
            raise InternalConsistencyError("singular basis") from exc


class TreeBasis:
    """Spanning tree over rows + ground; every column is an edge with +1 at its endpoints.

    Node ``m`` is the ground.  A column touching a dropped row is an edge to the ground.
    """

    def __init__(self, m: int, columns: list[np.ndarray]):
        self.m = m
        self.ends: list[tuple[int, int]] = [(0, 0)] * m
        for p, rows in enumerate(columns):
            self.set_column(p, rows)

    def set_column(self, p: int, rows: np.ndarray) -> None:
        if len(rows) == 1:
            self.ends[p] = (int(rows[0]), self.m)
        else:
            a, b = (int(r) if r >= 0 else self.m for r in rows)
            self.ends[p] = (a, b)
        self._order = None

    def _traverse(self):
        if self._order is not None:
            return self._order
        adj: list[list[tuple[int, int]]] = [[] for _ in range(self.m + 1)]
        for p, (a, b) in enumerate(self.ends):
            adj[a].append((b, p))
            adj[b].append((a, p))
        parent_edge = [-1] * (self.m + 1)
        parent = [-1] * (self.m + 1)
        seen = [False] * (self.m + 1)
        order = [self.m]
        seen[self.m] = True
        for v in order:
            for w, p in adj[v]:
                if not seen[w]:
                    seen[w] = True
                    parent[w] = v
                    parent_edge[w] = p
                    order.append(w)
        if len(order) != self.m + 1:
            raise InternalConsistencyError("basis is not a spanning tree")
        self._order = (order, parent, parent_edge)
        return self._order

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        order, _, parent_edge = self._traverse()
        residual = np.append(np.asarray(rhs, dtype=float), 0.0)
        x = np.zeros(self.m)
        for v in reversed(order[1:]):
            p = parent_edge[v]
            x[p] = residual[v]
            a, b = self.ends[p]
            other = b if a == v else a
            residual[other] -= x[p]
        return x

    def solve_transpose(self, c: np.ndarray) -> np.ndarray:
        order, parent, parent_edge = self._traverse()
        y = np.zeros(self.m + 1)
        for v in order[1:]:
            y[v] = c[parent_edge[v]] - y[parent[v]]
        return y[: self.m]


class _Simplex:
    """Bounded primal simplex on the reduced system; see module docstring."""

    def __init__(self, idx: np.ndarray, costs: np.ndarray, rowmap: _RowMap, b: np.ndarray, backend, tol: float):
        self.idx = idx
        self.costs = costs
        self.rowmap = rowmap
        self.col_rows = rowmap.column_rows(idx) if len(idx) else np.zeros((0, len(rowmap.sizes)), dtype=np.int64)
        self.b = b
        self.m = rowmap.m
        self.backend_cls = backend
        self.tol = tol
        self.K = idx.shape[0]
        self.pivots = 0

    # slot ids: real column j -> j; artificial row k -> K + k
    def _rows_of(self, slot: int) -> np.ndarray:
        if slot < self.K:
            return self.col_rows[slot]
        return np.array([slot - self.K])

    def _order_key(self, slot: int) -> int:
        # artificials rank before real columns so ratio ties evict them first
        return slot - self.K - self.m if slot >= self.K else slot

    def _column_vector(self, j: int) -> np.ndarray:
        a = np.zeros(self.m)
        rows = self.col_rows[j]
        a[rows[rows >= 0]] = 1.0
        return a

    def run(self, slots: list[int], x: np.ndarray, phase: int) -> tuple[list[int], np.ndarray, np.ndarray]:
        m = self.m
        basis = self.backend_cls(m, [self._rows_of(s) for s in slots])
        x = x.copy()
        is_basic = np.zeros(self.K, dtype=bool)
        for s in slots:
            if s < self.K:
                is_basic[s] = True
        locked = np.array([s >= self.K for s in slots]) if phase == 2 else np.zeros(m, dtype=bool)
        if phase == 1:
            slot_cost = lambda s: 1.0 if s >= self.K else 0.0  # noqa: E731
            col_cost = np.zeros(self.K)
        else:
            slot_cost = lambda s: 0.0 if s >= self.K else float(self.costs[s])  # noqa: E731
            col_cost = self.costs
        enter_tol = 0.5 * self.tol if phase == 2 else 1e-12
        bland = False
        max_pivots = 50 * (self.K + m) + 1000
        while True:
            cB = np.array([slot_cost(s) for s in slots])
            y = basis.solve_transpose(cB)
            yfull = np.append(y, 0.0)
            if self.K:
                reduced = col_cost - yfull[self.col_rows].sum(axis=1)
                reduced[is_basic] = 0.0
                cand = np.flatnonzero(reduced < -enter_tol)
            else:
                cand = np.zeros(0, dtype=np.int64)
            if cand.size == 0:
                return slots, x, y
            if bland:
                j = int(cand[0])
            else:
                j = int(cand[np.argmin(reduced[cand])])
            w = basis.solve(self._column_vector(j))
            best = None
            for p in range(m):
                if locked[p] and abs(w[p]) > _PIVOT_EPS:
                    ratio = 0.0
                elif w[p] > _PIVOT_EPS:
                    ratio = x[p] / w[p]
                else:
                    continue
                key = (ratio, self._order_key(slots[p]))
                if best is None or key < best[0]:
                    best = (key, p)
            if best is None:
                raise InternalConsistencyError("reduced transport LP reported unbounded")
            theta, p = best[0][0], best[1]
            if theta != 0.0:
                x -= theta * w
            x[p] = theta
            x[np.abs(x) < _ZERO] = 0.0
            if np.any(x < -1e-9):
                raise InternalConsistencyError("primal values went negative")
            np.maximum(x, 0.0, out=x)
            leaving = slots[p]
            if leaving < self.K:
                is_basic[leaving] = False
            is_basic[j] = True
            slots[p] = j
            locked[p] = False
            basis.set_column(p, self._rows_of(j))
            self.pivots += 1
            bland = theta <= _ZERO
            if self.pivots > max_pivots:
                raise InternalConsistencyError("simplex pivot limit exceeded")


def _backend_for(n_marginals: int, backend: str | None):
    if backend is None:
        backend = "tree" if n_marginals == 2 else "dense"
    if backend == "tree":
        if n_marginals != 2:
            raise ValueError("tree backend needs exactly two marginals")
        return TreeBasis
    if backend == "dense":
        return DenseBasis
    raise ValueError(f"unknown backend {backend!r}")


def solve_reduced(
    omega: ActiveSet | Iterable[Sequence[int]],
    marginals: Sequence[DiscreteMarginal],
    cost: CostSpec,
    warm: Basis | None = None,
    *,
    backend: str | None = None,
) -> ReducedSolution:
    """Optimal vertex plan and complementary-slack potentials on ``omega``.

    With a ``warm`` basis whose columns all lie in ``omega`` the simplex
    resumes from it, so the plan only moves through strictly improving pivots.
    """
    if not isinstance(omega, ActiveSet):
        omega = ActiveSet(omega)
    sizes = tuple(m.size for m in marginals)
    if sizes != cost.sizes:
        raise ValueError("marginal sizes do not match cost")
    n = len(sizes)
    rowmap = _RowMap(sizes)
    configs = omega.configs
    idx = np.array(configs, dtype=np.int64).reshape(len(configs), n)
    if idx.size and (np.any(idx < 0) or np.any(idx >= np.array(sizes))):
        raise ValueError("active configuration out of range")
    costs = cost.batch(idx) if len(configs) else np.zeros(0)
    b = rowmap.rhs(marginals)
    lp = _Simplex(idx, costs, rowmap, b, _backend_for(n, backend), cost.tol)
    K = len(configs)
    position = {c: j for j, c in enumerate(configs)}

    slots = None
    if warm is not None and all((not isinstance(s, tuple)) or s in position for s in warm.slots):
        slots = [position[s] if isinstance(s, tuple) else K + s for s in warm.slots]
        x = np.array(warm.values, dtype=float)
        if len(slots) != rowmap.m:
            slots = None
    if slots is None:
        slots, x, _ = lp.run([K + k for k in range(rowmap.m)], b.copy(), phase=1)
        residual = sum(x[p] for p, s in enumerate(slots) if s >= K)
        if residual > TOL_MASS:
            raise InfeasibleError(f"no plan is supported on the active set (phase-1 residual {residual:.3g})")
        for p, s in enumerate(slots):
            if s >= K:
                x[p] = 0.0
    slots, x, y = lp.run(slots, x, phase=2)

    entries = {configs[s]: float(x[p]) for p, s in enumerate(slots) if s < K and x[p] > 0.0}
    plan = SparsePlan(entries)
    potentials = rowmap.potentials(y)
    objective = math.fsum(costs[s] * x[p] for p, s in enumerate(slots) if s < K and x[p] > 0.0)
    basis = Basis(
        slots=tuple(configs[s] if s < K else s - K for s in slots),
        values=tuple(float(v) for v in x),
    )
    return ReducedSolution(plan=plan, potentials=potentials, basis=basis, objective=objective, pivots=lp.pivots)


def is_feasible(omega: ActiveSet | Iterable[Sequence[int]], marginals: Sequence[DiscreteMarginal]) -> bool:
    """Phase-1 feasibility of the active set (costs are irrelevant)."""
    sizes = tuple(m.size for m in marginals)
    zero = CostSpec(sizes, func=lambda idx: np.zeros(len(idx)), scale=0.0, name="zero")
    try:
        solve_reduced(omega, marginals, zero)
    except InfeasibleError:
        return False
    return True


def northwest_corner(marginals: Sequence[DiscreteMarginal]) -> SparsePlan:
    """Greedy sweep: put the smallest remaining mass on the current tuple, advance exhausted axes."""
    n = len(marginals)
    pos = [0] * n
    rem = [float(m.weights[0]) for m in marginals]
    last = [m.size - 1 for m in marginals]
    entries: dict[Configuration, float] = {}
    while True:
        t = min(rem)
        if t > 0.0:
            entries[tuple(pos)] = entries.get(tuple(pos), 0.0) + t
        rem = [r - t for r in rem]
        if pos == last:
            break
        exhausted = [r <= 1e-14 for r in rem]
        movable = [i for i in range(n) if exhausted[i] and pos[i] < last[i]]
        if not movable:
            # only rounding residue left on axes that cannot advance
            break
        for i in movable:
            pos[i] += 1
            rem[i] = float(marginals[i].weights[pos[i]])
    return SparsePlan(entries)


def initial_feasible_set(marginals: Sequence[DiscreteMarginal], iteration: int = 0) -> ActiveSet:
    return ActiveSet(northwest_corner(marginals).support, iteration)
