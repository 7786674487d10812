import numpy as np
import pytest
from scipy.optimize import linprog

from gencol_ot.core import CostSpec, DiscreteMarginal, Problem, all_configurations

ACCEPTANCE_LINES: list[str] = []


def random_marginal(rng, n):
    w = rng.random(n) + 0.05
    return DiscreteMarginal(w / w.sum())


def random_problem(rng, sizes, low=0.1, high=10.0, integer=False):
    if integer:
        table = rng.integers(int(low), int(high) + 1, size=sizes).astype(float)
    else:
        table = rng.uniform(low, high, size=sizes)
    return Problem(tuple(random_marginal(rng, n) for n in sizes), CostSpec(sizes, table=table))


def highs_objective(problem):
    """Full LP through scipy's HiGHS; independent of the package's simplex."""
    full = all_configurations(problem.sizes)
    rows, rhs = [], []
    for axis, mu in enumerate(problem.marginals):
        for i in range(mu.size):
            rows.append((full[:, axis] == i).astype(float))
            rhs.append(mu.weights[i])
    res = linprog(problem.cost.batch(full), A_eq=np.array(rows), b_eq=rhs, bounds=(0, None), method="highs")
    assert res.status == 0
    return res.fun


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
