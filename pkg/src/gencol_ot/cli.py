"""Command line front end: ``solve``, ``oracle``, ``verify``, ``counterexample``.

Problem document (JSON)::

    {"marginals": [[...], [...]],
     "cost": [[...], ...]                      # dense nested array, or
     "cost": {"builtin": "quadratic", "points": [[[x, ...], ...], ...]},
     "cost": {"builtin": "counterexample"},
     "initial": [[i, j], ...]}                 # optional, used with --init file

Exit codes: 0 success, 1 input error, 2 iteration cap reached, 3 dense guard
exceeded, 4 a verification check failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import re
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .core import (
    DENSE_GUARD,
    TOL_MASS,
    CostSpec,
    DiscreteMarginal,
    DualPotentials,
    MalformedPlanError,
    Problem,
    SparsePlan,
    marginal_error,
    support_bound,
)
from .counterexample import build_fixture, counterexample_cost_values, verify_stationarity
from .gencol import GenColConfig, run
from .oracle import SizeGuardError, audit_sparsity, certify_full_dual_feasibility, check_ccm, solve_dense_lp
from .reduced_lp import InfeasibleError

EXIT_OK, EXIT_INPUT, EXIT_CAP, EXIT_GUARD, EXIT_CHECK = 0, 1, 2, 3, 4
TABLE_GUARD = 10**7
RESULT_FORMAT = "gencol-ot/result-v1"


class InputError(ValueError):
    """Problem or result document failed to parse or validate; message is line-anchored."""


def _line_of(text: str, key: str) -> int:
    m = re.search(rf'"{re.escape(key)}"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else 1


def _load_json(path: Path) -> tuple[dict, str]:
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"{path}: cannot read: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise InputError(f"{path}:1: top level must be an object")
    return doc, text


def quadratic_cost(points: list[np.ndarray]) -> CostSpec:
    """Sum over axis pairs of squared Euclidean distances between support points."""
    pts = [np.atleast_2d(np.asarray(p, dtype=float).T).T for p in points]
    dims = {p.shape[1] for p in pts}
    if len(dims) != 1:
        raise ValueError("all point sets must share a dimension")
    n = len(pts)

    def f(idx: np.ndarray) -> np.ndarray:
        out = np.zeros(len(idx))
        for i in range(n):
            for j in range(i + 1, n):
                d = pts[i][idx[:, i]] - pts[j][idx[:, j]]
                out += np.einsum("kd,kd->k", d, d)
        return out

    lo = np.min([p.min(axis=0) for p in pts], axis=0)
    hi = np.max([p.max(axis=0) for p in pts], axis=0)
    scale = n * (n - 1) / 2 * float(np.sum((hi - lo) ** 2))
    return CostSpec(tuple(len(p) for p in pts), func=f, scale=scale, name="quadratic")


def parse_problem(doc: dict, text: str = "", source: str = "<problem>") -> Problem:
    def fail(key: str, msg: str):
        raise InputError(f"{source}:{_line_of(text, key)}: {msg}")

    raw = doc.get("marginals")
    if not isinstance(raw, list) or len(raw) < 2:
        fail("marginals", "'marginals' must be a list of at least two weight arrays")
    marginals = []
    for i, w in enumerate(raw):
        try:
            marginals.append(DiscreteMarginal(np.asarray(w, dtype=float)))
        except (ValueError, TypeError) as exc:
            fail("marginals", f"marginal {i}: {exc}")
    sizes = tuple(m.size for m in marginals)
    if "N" in doc and doc["N"] != len(sizes):
        fail("N", f"N={doc['N']} but {len(sizes)} marginals given")
    spec = doc.get("cost")
    try:
        if isinstance(spec, list):
            if math.prod(sizes) > TABLE_GUARD:
                fail("cost", f"dense cost tables are limited to {TABLE_GUARD} entries; use a builtin")
            cost = CostSpec(sizes, table=np.asarray(spec, dtype=float), name="table")
        elif isinstance(spec, dict):
            kind = spec.get("builtin")
            if kind == "quadratic":
                cost = quadratic_cost(spec.get("points", []))
            elif kind == "counterexample":
                cost = CostSpec(sizes, func=counterexample_cost_values, scale=2.0, name="counterexample")
                if sizes != (3, 3, 3):
                    fail("cost", "the counterexample cost needs three marginals on three points")
            else:
                fail("cost", f"unknown builtin cost {kind!r}")
        else:
            fail("cost", "'cost' must be a nested array or a builtin object")
        return Problem(tuple(marginals), cost)
    except InputError:
        raise
    except (ValueError, TypeError) as exc:
        fail("cost", str(exc))


def load_problem(path: Path) -> tuple[Problem, dict]:
    doc, text = _load_json(path)
    return parse_problem(doc, text, str(path)), doc


def _initial_from(doc: dict, problem: Problem, source: str) -> list[tuple[int, ...]]:
    init = doc.get("initial")
    if not isinstance(init, list) or not init:
        raise InputError(f"{source}:1: --init file needs a non-empty 'initial' list in the problem document")
    out = []
    for r in init:
        if not isinstance(r, list) or len(r) != problem.n_marginals:
            raise InputError(f"{source}:1: initial configuration {r!r} has the wrong arity")
        out.append(tuple(int(v) for v in r))
    return out


def plan_to_json(plan: SparsePlan) -> list[dict]:
    return [{"config": list(c), "mass": m} for c, m in sorted(plan.items())]


def plan_from_json(raw) -> SparsePlan:
    return SparsePlan({tuple(int(v) for v in e["config"]): float(e["mass"]) for e in raw})


def _result_doc(kind: str, problem: Problem, plan: SparsePlan, potentials: DualPotentials, objective: float, **extra):
    doc = {
        "format": RESULT_FORMAT,
        "kind": kind,
        "sizes": list(problem.sizes),
        "objective": objective,
        "plan": plan_to_json(plan),
        "potentials": [p.tolist() for p in potentials.potentials],
    }
    doc.update(extra)
    doc["created"] = datetime.now(timezone.utc).isoformat()
    return doc


def _emit(doc: dict, out: str | None) -> None:
    payload = json.dumps(doc, indent=1)
    if out is None or out == "-":
        sys.stdout.write(payload + "\n")
    else:
        Path(out).write_text(payload + "\n")


def cmd_solve(args) -> int:
    problem, doc = load_problem(Path(args.problem))
    initial = _initial_from(doc, problem, args.problem) if args.init == "file" else None
    rule = args.rule.replace("-", "_") if args.rule else None
    config = GenColConfig(
        beta=args.beta, rule=rule, seed=args.seed, max_outer_iterations=args.max_iter, accept_tol=args.tol
    )
    report = run(problem, config, initial, certify=not args.no_certify)
    extra = {
        "termination": report.termination,
        "certificate": report.certificate,
        "violator": None if report.violator is None else {"config": list(report.violator[0]), "gain": report.violator[1]},
        "seed": report.rng_seed,
        "rule": report.rule,
        "beta": report.beta,
        "size_bound": report.size_bound,
        "objective_trajectory": [[i, v] for i, v in report.objective_trajectory],
        "active_set_sizes": report.active_set_sizes,
    }
    _emit(_result_doc("gencol", problem, report.final_plan, report.final_potentials, report.objective, **extra), args.output)
    if args.trajectory_out:
        with open(args.trajectory_out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "objective", "omega_size"])
            for (i, v), size in zip(report.objective_trajectory, report.active_set_sizes):
                w.writerow([i, repr(v), size])
    return EXIT_OK if report.termination == "exhausted_proposals" else EXIT_CAP


def cmd_oracle(args) -> int:
    problem, _ = load_problem(Path(args.problem))
    try:
        res = solve_dense_lp(problem)
    except SizeGuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GUARD
    _emit(_result_doc("oracle", problem, res.plan, res.potentials, res.objective), args.output)
    return EXIT_OK


def cmd_verify(args) -> int:
    problem, _ = load_problem(Path(args.problem))
    result, text = _load_json(Path(args.result))
    if "plan" not in result:
        raise InputError(f"{args.result}:1: result has no 'plan'")
    try:
        plan = plan_from_json(result["plan"])
    except (MalformedPlanError, KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{args.result}:{_line_of(text, 'plan')}: {exc}") from exc
    if plan.support and len(plan.support[0]) != problem.n_marginals:
        raise InputError(f"{args.result}:{_line_of(text, 'plan')}: plan arity does not match the problem")
    if "sizes" in result and list(result["sizes"]) != list(problem.sizes):
        raise InputError(f"{args.result}:{_line_of(text, 'sizes')}: sizes {result['sizes']} != {list(problem.sizes)}")

    checks = []
    checks.append({
        "name": "sparsity",
        "passed": audit_sparsity(plan, problem.sizes),
        "support": len(plan),
        "bound": support_bound(problem.sizes),
    })
    try:
        err = marginal_error(plan, problem.marginals)
    except MalformedPlanError as exc:
        raise InputError(f"{args.result}:{_line_of(text, 'plan')}: {exc}") from exc
    checks.append({"name": "marginals", "passed": err <= TOL_MASS, "max_error": err})
    if args.ccm_k is not None:
        if problem.n_marginals != 2:
            checks.append({"name": "ccm", "passed": True, "skipped": "only defined for two marginals"})
        else:
            v = check_ccm(plan.support, problem.cost, args.ccm_k)
            entry = {"name": "ccm", "passed": v is None, "max_k": args.ccm_k}
            if v is not None:
                entry["violation"] = {
                    "points": [list(p) for p in v.points],
                    "permutation": list(v.permutation),
                    "original_cost": v.original_cost,
                    "permuted_cost": v.permuted_cost,
                }
            checks.append(entry)
    if args.dual_cert:
        pots = result.get("potentials")
        if not isinstance(pots, list) or [len(p) for p in pots] != list(problem.sizes):
            checks.append({"name": "dual_certificate", "passed": False, "detail": "missing or misshapen potentials"})
        else:
            u = DualPotentials(tuple(np.asarray(p, dtype=float) for p in pots))
            try:
                viol = certify_full_dual_feasibility(u, problem.cost)
            except SizeGuardError:
                checks.append({"name": "dual_certificate", "passed": False, "detail": "uncertified: product too large"})
            else:
                entry = {"name": "dual_certificate", "passed": viol is None}
                if viol is not None:
                    entry["violator"] = {"config": list(viol[0]), "gain": viol[1]}
                checks.append(entry)
    report = {"passed": all(c["passed"] for c in checks), "checks": checks}
    _emit(report, args.output)
    return EXIT_OK if report["passed"] else EXIT_CHECK


def cmd_counterexample(args) -> int:
    fx = build_fixture()
    if args.write_problem:
        doc = {
            "N": 3,
            "marginals": [m.weights.tolist() for m in fx.problem.marginals],
            "cost": {"builtin": "counterexample"},
            "initial": [list(r) for r in fx.gamma0.support],
        }
        Path(args.write_problem).write_text(json.dumps(doc, indent=1) + "\n")
    ok = verify_stationarity(fx)
    _emit({
        "stationary": ok,
        "gamma0": plan_to_json(fx.gamma0),
        "gamma_star": plan_to_json(fx.gamma_star),
        "one_entry_proposals": [list(r) for r in fx.one_entry_proposals],
        "all_one_entry_mutations": [list(r) for r in fx.all_one_entry_mutations()],
    }, args.output)
    return EXIT_OK if ok else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gencol-ot", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run genetic column generation")
    p.add_argument("problem")
    p.add_argument("--beta", type=float, default=3.0)
    p.add_argument("--rule", choices=["two-marginal", "single-entry", "many-entry"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iter", type=int, default=10_000)
    p.add_argument("--tol", type=float, default=None, help="acceptance threshold for the gain")
    p.add_argument("--init", choices=["northwest", "file"], default="northwest")
    p.add_argument("--trajectory-out")
    p.add_argument("--no-certify", action="store_true")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("oracle", help=f"solve the full LP densely (product size <= {DENSE_GUARD})")
    p.add_argument("problem")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("verify", help="check a result against its problem")
    p.add_argument("result")
    p.add_argument("problem")
    p.add_argument("--ccm-k", type=int, default=None)
    p.add_argument("--dual-cert", action="store_true")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("counterexample", help="build and check the three-marginal stalling instance")
    p.add_argument("--write-problem")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_counterexample)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
