import csv
import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from gencol_ot import cli
from gencol_ot.cli import load_problem, main
from gencol_ot.oracle import solve_dense_lp

from conftest import highs_objective

DATA = Path(__file__).parent / "data"


def _read(path):
    return json.loads(Path(path).read_text())


def _write(path, doc):
    Path(path).write_text(json.dumps(doc, indent=1))
    return str(path)


def test_solve_tiny(tmp_path):
    out = tmp_path / "r.json"
    assert main(["solve", str(DATA / "tiny.json"), "-o", str(out)]) == 0
    doc = _read(out)
    assert doc["plan"] == [{"config": [0, 0], "mass": 1.0}]
    assert doc["objective"] == pytest.approx(3.25)
    assert doc["termination"] == "exhausted_proposals"
    assert doc["certificate"] == "certified_optimal"


def test_oracle_golden():
    golden = _read(DATA / "random5x5.oracle.golden.json")
    problem, _ = load_problem(DATA / "random5x5.json")
    res = solve_dense_lp(problem)
    assert res.objective == pytest.approx(golden["objective"], abs=problem.tol)
    assert golden["objective"] == pytest.approx(highs_objective(problem), abs=problem.tol)


def test_oracle_cli_matches_golden(tmp_path):
    out = tmp_path / "o.json"
    assert main(["oracle", str(DATA / "random5x5.json"), "-o", str(out)]) == 0
    doc = _read(out)
    golden = _read(DATA / "random5x5.oracle.golden.json")
    doc.pop("created")
    assert doc == golden


def test_solve_matches_oracle_10x10(tmp_path):
    problem_path = DATA / "random10x10.json"
    sol, orc = tmp_path / "s.json", tmp_path / "o.json"
    assert main(["solve", str(problem_path), "--seed", "3", "-o", str(sol)]) == 0
    assert main(["oracle", str(problem_path), "-o", str(orc)]) == 0
    problem, _ = load_problem(problem_path)
    assert _read(sol)["objective"] == pytest.approx(_read(orc)["objective"], abs=problem.tol)
    assert _read(sol)["certificate"] == "certified_optimal"


def test_solve_is_deterministic_modulo_timestamp(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for out in (a, b):
        assert main(["solve", str(DATA / "random10x10.json"), "--seed", "11", "--beta", "2", "-o", str(out)]) == 0
    da, db = _read(a), _read(b)
    da.pop("created"), db.pop("created")
    assert json.dumps(da) == json.dumps(db)


def test_masses_round_trip_exactly(tmp_path):
    out = tmp_path / "r.json"
    main(["solve", str(DATA / "random5x5.json"), "-o", str(out)])
    plan = cli.plan_from_json(_read(out)["plan"])
    assert cli.plan_to_json(plan) == _read(out)["plan"]


def test_trajectory_csv(tmp_path):
    out, traj = tmp_path / "r.json", tmp_path / "t.csv"
    assert main(["solve", str(DATA / "random10x10.json"), "--trajectory-out", str(traj), "-o", str(out)]) == 0
    rows = list(csv.reader(traj.open()))
    assert rows[0] == ["iter", "objective", "omega_size"]
    doc = _read(out)
    assert len(rows) - 1 == len(doc["objective_trajectory"])
    assert float(rows[-1][1]) == doc["objective"]
    assert [int(r[0]) for r in rows[1:]] == list(range(len(rows) - 1))


def test_iteration_cap_exit_code(tmp_path):
    out = tmp_path / "r.json"
    assert main(["solve", str(DATA / "random10x10.json"), "--max-iter", "1", "-o", str(out)]) == 2
    assert _read(out)["termination"] == "max_iterations"


def test_verify_oracle_result_passes(tmp_path):
    orc, rep = tmp_path / "o.json", tmp_path / "v.json"
    main(["oracle", str(DATA / "random5x5.json"), "-o", str(orc)])
    code = main(["verify", str(orc), str(DATA / "random5x5.json"), "--ccm-k", "3", "--dual-cert", "-o", str(rep)])
    assert code == 0
    report = _read(rep)
    assert report["passed"]
    assert {c["name"] for c in report["checks"]} == {"sparsity", "marginals", "ccm", "dual_certificate"}


def test_verify_product_plan_fails_sparsity(tmp_path):
    problem, _ = load_problem(DATA / "random5x5.json")
    mu, nu = (m.weights for m in problem.marginals)
    plan = [{"config": [i, j], "mass": float(mu[i] * nu[j])} for i in range(5) for j in range(5)]
    res = _write(tmp_path / "prod.json", {"plan": plan})
    rep = tmp_path / "v.json"
    assert main(["verify", res, str(DATA / "random5x5.json"), "-o", str(rep)]) == 4
    sparsity = next(c for c in _read(rep)["checks"] if c["name"] == "sparsity")
    assert not sparsity["passed"] and sparsity["support"] == 25 and sparsity["bound"] == 9


def test_verify_ccm_catches_swappable_pair(tmp_path):
    prob = _write(tmp_path / "p.json", {"marginals": [[0.5, 0.5], [0.5, 0.5]], "cost": [[0, 1], [1, 0]]})
    res = _write(tmp_path / "r.json", {"plan": [{"config": [0, 1], "mass": 0.5}, {"config": [1, 0], "mass": 0.5}]})
    rep = tmp_path / "v.json"
    assert main(["verify", res, prob, "--ccm-k", "2", "-o", str(rep)]) == 4
    ccm = next(c for c in _read(rep)["checks"] if c["name"] == "ccm")
    assert ccm["violation"]["points"] == [[0, 1], [1, 0]]


def test_counterexample_command(tmp_path):
    prob, rep = tmp_path / "ce.json", tmp_path / "ce_report.json"
    assert main(["counterexample", "--write-problem", str(prob), "-o", str(rep)]) == 0
    report = _read(rep)
    assert report["stationary"]
    assert len(report["one_entry_proposals"]) == 16
    assert len(report["all_one_entry_mutations"]) == 18

    stuck = tmp_path / "stuck.json"
    args = ["solve", str(prob), "--init", "file", "--rule", "single-entry", "-o", str(stuck)]
    assert main(args) == 0
    doc = _read(stuck)
    assert doc["objective"] == pytest.approx(1.0, abs=1e-12)
    assert doc["certificate"] == "stationary_under_rule"
    assert main(["verify", str(stuck), str(prob), "--dual-cert", "-o", str(tmp_path / "v.json")]) == 4

    free = tmp_path / "free.json"
    assert main(["solve", str(prob), "--init", "file", "--rule", "many-entry", "-o", str(free)]) == 0
    assert _read(free)["objective"] == pytest.approx(0.0, abs=1e-12)


def test_verify_skips_ccm_for_three_marginals(tmp_path):
    prob = tmp_path / "ce.json"
    main(["counterexample", "--write-problem", str(prob), "-o", str(tmp_path / "x.json")])
    orc, rep = tmp_path / "o.json", tmp_path / "v.json"
    assert main(["oracle", str(prob), "-o", str(orc)]) == 0
    assert main(["verify", str(orc), str(prob), "--ccm-k", "3", "-o", str(rep)]) == 0
    ccm = next(c for c in _read(rep)["checks"] if c["name"] == "ccm")
    assert "skipped" in ccm


def test_malformed_json_is_line_anchored(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n "marginals": [[1.0], [1.0]],\n "cost": [[1.0]\n}\n')
    assert main(["solve", str(bad)]) == 1
    err = capsys.readouterr().err
    assert f"{bad}:4:" in err


def test_bad_marginal_reports_its_line(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n "cost": [[1, 2], [3, 4]],\n "marginals": [[0.5, 0.5], [0.9, 0.3]]\n}\n')
    assert main(["oracle", str(bad)]) == 1
    err = capsys.readouterr().err
    assert f"{bad}:3:" in err and "sum" in err


def test_cost_shape_mismatch(tmp_path, capsys):
    bad = _write(tmp_path / "bad.json", {"marginals": [[0.5, 0.5], [1.0]], "cost": [[1, 2], [3, 4]]})
    assert main(["oracle", bad]) == 1
    assert "shape" in capsys.readouterr().err


def test_disconnected_initial_set_is_rejected(tmp_path, capsys):
    doc = {"marginals": [[0.5, 0.5], [0.5, 0.5]], "cost": [[0, 1], [1, 0]], "initial": [[0, 0]]}
    prob = _write(tmp_path / "p.json", doc)
    assert main(["solve", prob, "--init", "file"]) == 1
    assert "error" in capsys.readouterr().err


def test_dense_guard_exit_code(tmp_path, capsys):
    rng = np.random.default_rng(0)
    pts = [rng.random((1001, 2)).tolist(), rng.random((1001, 2)).tolist()]
    doc = {"marginals": [[1 / 1001] * 1001] * 2, "cost": {"builtin": "quadratic", "points": pts}}
    prob = _write(tmp_path / "big.json", doc)
    assert main(["oracle", prob]) == 3
    assert "guard" in capsys.readouterr().err


def test_quadratic_builtin_matches_table(tmp_path):
    rng = np.random.default_rng(4)
    x, y = rng.random((4, 2)), rng.random((3, 2))
    table = ((x[:, None, :] - y[None, :, :]) ** 2).sum(-1)
    mu, nu = [0.25] * 4, [1 / 3] * 3
    a = _write(tmp_path / "a.json", {"marginals": [mu, nu], "cost": {"builtin": "quadratic", "points": [x.tolist(), y.tolist()]}})
    b = _write(tmp_path / "b.json", {"marginals": [mu, nu], "cost": table.tolist()})
    pa, _ = load_problem(Path(a))
    pb, _ = load_problem(Path(b))
    assert solve_dense_lp(pa).objective == pytest.approx(solve_dense_lp(pb).objective, abs=1e-12)


def test_stdout_output(tmp_path, capsys):
    shutil.copy(DATA / "tiny.json", tmp_path / "t.json")
    assert main(["oracle", str(tmp_path / "t.json")]) == 0
    assert json.loads(capsys.readouterr().out)["kind"] == "oracle"
