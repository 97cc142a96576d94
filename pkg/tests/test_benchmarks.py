import numpy as np
import pytest

from conftest import TANH1
from singular_shooting import (
    Grid,
    NotFoundError,
    catalog,
    instantiate,
    shooting_residual,
    validate_problem,
)
from singular_shooting.benchmarks import make_goh_probe, make_pa1
from singular_shooting.hamiltonian import elim_jac


def _samples(b, k=4):
    rng = np.random.default_rng(1)
    return [(rng.uniform(-1, 1, b.problem.n), rng.uniform(-1, 1, b.problem.l)) for _ in range(k)]


def test_catalog_fixed_order():
    assert catalog() == ["NLQ1", "SLQ1", "PA1", "PA1-neg"]


@pytest.mark.parametrize("name", ["NLQ1", "SLQ1", "PA1", "PA1-neg"])
def test_instantiates_and_validates(name):
    b = instantiate(name)
    assert b.name == name and b.def_ is b.problem
    assert validate_problem(b.problem, _samples(b)).passed
    assert instantiate(name) is b  # cached


def test_unknown_name():
    with pytest.raises(NotFoundError):
        instantiate("NOPE")


@pytest.mark.parametrize("name", ["NLQ1", "SLQ1", "PA1", "PA1-neg"])
def test_residual_invariant(name):
    b = instantiate(name)
    r = shooting_residual(b.problem, b.nu_hat.to_array(b.problem), Grid(2000, b.problem.T))
    assert np.max(np.abs(r)) <= 1e-8


def test_reference_costs():
    assert instantiate("NLQ1").reference_cost == pytest.approx(0.5 * TANH1, abs=1e-15)
    assert instantiate("NLQ1").reference_cost == pytest.approx(0.3807970780, abs=1e-10)
    assert instantiate("PA1").reference_cost == pytest.approx(0.5 * TANH1, abs=1e-15)
    assert instantiate("SLQ1").reference_cost == 0.0


def test_slq1_analytic_state():
    s = instantiate("SLQ1").analytic_state(np.pi / 2)
    np.testing.assert_allclose(s["x"], [1, 0, np.pi / 2], atol=1e-15)
    np.testing.assert_allclose(s["v"], [0.0], atol=1e-15)
    np.testing.assert_array_equal(s["p"], [0, 1, 0])


def test_shooting_targets():
    P = instantiate("PA1").problem
    np.testing.assert_allclose(instantiate("PA1").nu_hat.to_array(P),
                               [1, 0, 0, TANH1, 0, 1, -TANH1, 0, -1], atol=1e-15)
    Q = instantiate("NLQ1").problem
    np.testing.assert_allclose(instantiate("NLQ1").nu_hat.to_array(Q), [1, 0, TANH1, 1, -TANH1, -1], atol=1e-15)
    S = instantiate("SLQ1").problem
    np.testing.assert_array_equal(instantiate("SLQ1").nu_hat.to_array(S), [0, 0, 0, 0, 1, 0, 0, -1, 0])


@pytest.mark.parametrize("name", ["NLQ1", "PA1", "PA1-neg"])
def test_analytic_costate_equation(name):
    """Central differences of the analytic state and costate obey the canonical equations."""
    from singular_shooting import dynamics_eval, hamiltonian

    b, h = instantiate(name), 1e-5
    for t in (0.2, 0.5, 0.8):
        s, sp, sm = (b.analytic_state(t + d) for d in (0.0, h, -h))
        f, *_ = dynamics_eval(b.problem, s["x"], s["u"], s["v"])
        H = hamiltonian(b.problem, s["x"], s["u"], s["v"], s["p"])
        np.testing.assert_allclose((sp["x"] - sm["x"]) / (2 * h), f, atol=1e-8)
        np.testing.assert_allclose((sp["p"] - sm["p"]) / (2 * h), -H.H_x, atol=1e-8)


def test_pa1_elimination_jacobian_is_identity():
    b = instantiate("PA1")
    for t in np.linspace(0, 1, 11):
        s = b.analytic_state(t)
        J = elim_jac(b.problem, s["x"], s["p"], np.concatenate([s["u"], s["v"]]))
        np.testing.assert_allclose(np.asarray(J), np.eye(2), atol=1e-10)


def test_pa1_variants_share_the_extremal():
    a, c = instantiate("PA1"), make_pa1(terminal_x2=1.0)
    np.testing.assert_array_equal(a.nu_hat.to_array(a.problem), c.nu_hat.to_array(c.problem))


def test_probe_is_not_registered():
    assert make_goh_probe().name not in catalog()
    b = make_goh_probe()
    assert validate_problem(b.problem, _samples(b)).passed
