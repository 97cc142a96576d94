import json

import numpy as np
import pytest

from conftest import TANH1
from singular_shooting import read_report, write_report
from singular_shooting.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, ConfigError, RunConfig, main
from singular_shooting.report import dumps


def test_solve_nlq1(tmp_path):
    rep, traj = tmp_path / "r.json", tmp_path / "t.csv"
    code = main(["solve", "--problem", "NLQ1", "--grid", "2000", "--tol", "1e-10", "--perturb", "0.1",
                 "--seed", "7", "--report", str(rep), "--traj", str(traj)])
    assert code == EXIT_OK
    d = read_report(rep)
    assert d["converged"] is True
    assert abs(d["cost"] - 0.5 * TANH1) <= 1e-8
    for key in ("problem", "N", "mode", "iterates", "observed_order", "nu_hat", "timing"):
        assert key in d
    assert d["iterates"][-1]["residual_norm"] <= 1e-10
    assert traj.read_text().splitlines()[0].startswith("t,x1,x2,u1,p1,p2,H")


def test_unknown_problem(capsys):
    assert main(["solve", "--problem", "NOPE"]) == EXIT_CONFIG
    assert "NOPE" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["solve", "--problem", "NLQ1", "--grid", "1"],
    ["solve", "--problem", "NLQ1", "--tol", "0"],
    ["solve", "--problem", "NLQ1", "--jacobian", "adjoint"],
    ["solve", "--problem", "NLQ1", "--nu0", "1,2"],
    ["residual", "--problem", "NLQ1"],
    ["frobnicate"],
])
def test_config_errors(argv):
    assert main(argv) == EXIT_CONFIG


def test_run_config_validation():
    with pytest.raises(ConfigError):
        RunConfig(problem="NLQ1", grid=1).validate()
    with pytest.raises(ConfigError):
        RunConfig(problem="NLQ1", tol=-1.0).validate()


def test_slq1_at_fixed_point(tmp_path):
    rep = tmp_path / "r.json"
    assert main(["solve", "--problem", "SLQ1", "--grid", "2000", "--perturb", "0.0", "--report", str(rep)]) == 0
    d = read_report(rep)
    assert len(d["iterates"]) - 1 <= 1 and abs(d["cost"]) <= 1e-8


def test_solver_failure_writes_report(tmp_path):
    rep = tmp_path / "r.json"
    code = main(["solve", "--problem", "PA1", "--grid", "100", "--nu0", "1,0,0,0,0,0,-1,0,0",
                 "--report", str(rep)])
    assert code == EXIT_SOLVER
    d = read_report(rep)
    assert d["converged"] is False and d["message"]


def test_check_pa1_neg(tmp_path):
    rep = tmp_path / "r.json"
    assert main(["check", "--problem", "PA1-neg", "--grid", "2000", "--qp-grid", "100",
                 "--report", str(rep)]) == EXIT_CHECK
    ssc = read_report(rep)["ssc"]
    assert ssc["positivity"]["rho_hat"] < 0 and ssc["passed"] is False
    assert ssc["pointwise"]["passed"] is True


def test_check_slq1(tmp_path):
    rep = tmp_path / "r.json"
    code = main(["check", "--problem", "SLQ1", "--grid", "2000", "--qp-grid", "100", "--report", str(rep)])
    ssc = read_report(rep)["ssc"]
    assert ssc["pointwise"]["margins"]["V_norm"] == 0.0
    assert abs(ssc["pointwise"]["margins"]["block"] - 1.0) <= 1e-6
    assert ssc["pointwise"]["passed"] is True
    # the positivity estimate on SLQ1 is exactly 0 (terminal-jump direction has zero form), so the check fails
    assert abs(ssc["positivity"]["rho_hat"]) <= 1e-10
    assert code == EXIT_CHECK


def test_check_pa1(tmp_path):
    rep = tmp_path / "r.json"
    code = main(["check", "--problem", "PA1", "--grid", "2000", "--qp-grid", "100", "--report", str(rep)])
    ssc = read_report(rep)["ssc"]
    assert ssc["pointwise"]["passed"] is True
    # same zero-cost terminal-jump direction as SLQ1: rho_hat is 0, not positive (acceptance criterion 6 fails)
    assert abs(ssc["positivity"]["rho_hat"]) <= 1e-10
    assert code == EXIT_CHECK


def test_residual_reingest(tmp_path):
    rep, res = tmp_path / "r.json", tmp_path / "res.json"
    assert main(["solve", "--problem", "PA1", "--grid", "1000", "--perturb", "0.05", "--seed", "2",
                 "--report", str(rep)]) == EXIT_OK
    assert main(["residual", "--problem", "PA1", "--grid", "1000", "--nu0", str(rep), "--report", str(res)]) == 0
    a, b = read_report(rep), read_report(res)
    np.testing.assert_array_equal(b["nu"], a["nu_hat"])
    assert abs(a["residual_norm"] - b["residual_norm"]) <= 1e-12


def test_solve_reports_deterministic(tmp_path):
    texts = []
    for k in range(2):
        p = tmp_path / f"r{k}.json"
        assert main(["solve", "--problem", "NLQ1", "--grid", "500", "--perturb", "0.1", "--seed", "3",
                     "--jacobian", "fd", "--report", str(p)]) == EXIT_OK
        d = json.loads(p.read_text())
        d.pop("timing")
        texts.append(json.dumps(d, sort_keys=True))
    assert texts[0] == texts[1]


def test_bench_subset_byte_identical(tmp_path, capsys):
    paths = [tmp_path / "a.json", tmp_path / "b.json"]
    for p in paths:
        assert main(["bench", "--only", "5", "7", "--report", str(p)]) == EXIT_OK
    assert paths[0].read_bytes() == paths[1].read_bytes()
    out = capsys.readouterr().out
    assert "2/2 passed" in out
    d = read_report(paths[0])
    assert [c["number"] for c in d["criteria"]] == [5, 7] and d["passed"] is True


def test_float_format_round_trips(tmp_path):
    x = [0.1, 1 / 3, np.pi, -2.5e-300, 1e22]
    p = tmp_path / "f.json"
    write_report(dict(x=np.array(x), bad=float("nan")), p)
    back = read_report(p)
    assert back["x"] == x and back["bad"] is None
    assert "0.10000000000000001" in dumps(dict(v=0.1))
