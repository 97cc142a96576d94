import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import TANH1, constant_problem, probe
from singular_shooting import (
    InputError,
    ddot_Hv,
    dot_Hv,
    hamiltonian,
    instantiate,
    lie_bracket_x,
    udot_gamma,
)

finite = st.floats(-1.5, 1.5, allow_nan=False)


def test_hamiltonian_zero_costate():
    P = instantiate("PA1").problem
    d = hamiltonian(P, [0.3, 1.0, -2.0], [0.4], [0.7], [0, 0, 0])
    for k in ("H_x", "H_u", "H_v", "H_xx", "H_ux", "H_vx", "H_uu", "H_uv"):
        assert np.all(getattr(d, k) == 0), k
    assert d.H == 0


def test_hamiltonian_slq1():
    P = instantiate("SLQ1").problem
    d = hamiltonian(P, [0, 0, 0], [], [1.0], [0, 1, 0])
    assert d.H == 0.0
    np.testing.assert_array_equal(d.H_v, [0.0])


def test_hamiltonian_nlq1():
    P = instantiate("NLQ1").problem
    d = hamiltonian(P, [1, 0], [-TANH1], [], [TANH1, 1])
    assert abs(d.H_u[0]) <= 1e-15
    np.testing.assert_allclose(d.H_uu, [[1.0]])


def test_hamiltonian_shapes_and_symmetry():
    P = probe().problem
    d = hamiltonian(P, [0.2, -0.4, 1.0], [0.3], [0.5], [1.0, -0.5, 2.0])
    assert d.H_xx.shape == (3, 3) and d.H_ux.shape == (1, 3) and d.H_vx.shape == (1, 3)
    assert d.H_uv.shape == (1, 1)
    np.testing.assert_allclose(d.H_xx, d.H_xx.T, atol=1e-14)


def test_lie_bracket_trivial_cases():
    P = probe().problem
    x, u = [0.3, 0.1, -0.2], [0.5]
    np.testing.assert_array_equal(lie_bracket_x(P, 1, 1, x, u), np.zeros(3))
    C = constant_problem(n=2, l=0, m=1, c0=[1.0, 2.0], c=[[0.0, -1.0]])
    np.testing.assert_array_equal(lie_bracket_x(C, 0, 1, [0.1, 0.2], []), np.zeros(2))


def test_lie_bracket_slq1():
    P = instantiate("SLQ1").problem
    np.testing.assert_allclose(lie_bracket_x(P, 0, 1, [1, 0, 0], []), [0, 1, 0], atol=1e-15)


def test_lie_bracket_bad_index():
    P = instantiate("SLQ1").problem
    with pytest.raises(InputError):
        lie_bracket_x(P, 0, 2, [0, 0, 0], [])


def test_dot_hv_constant_fields():
    C = constant_problem(n=2, l=0, m=2, c0=[1.0, 0.0], c=[[0.0, 1.0], [2.0, 3.0]])
    np.testing.assert_array_equal(dot_Hv(C, [0.5, 1], [], [1.0, -1.0], [2.0, 1.0]), [0.0, 0.0])


@pytest.mark.parametrize("v", [0.0, 0.7, -3.0])
def test_dot_hv_slq1(v):
    P = instantiate("SLQ1").problem
    np.testing.assert_allclose(dot_Hv(P, [1, 0, 0], [], [v], [0, 1, 0]), [-1.0], rtol=1e-15)


@pytest.mark.parametrize("t", np.linspace(0, np.pi, 7))
def test_dot_hv_slq1_extremal(t):
    P = instantiate("SLQ1").problem
    assert abs(dot_Hv(P, [np.sin(t), 0, t], [], [np.cos(t)], [0, 1, 0])[0]) <= 1e-15


def test_udot_gamma():
    P = instantiate("SLQ1").problem
    assert udot_gamma(P, [0, 0, 0], [], [1.0], [0, 1, 0]).shape == (0,)
    Q = instantiate("NLQ1").problem
    np.testing.assert_allclose(udot_gamma(Q, [1, 0], [-TANH1], [], [TANH1, 1]), [1.0], rtol=1e-14)
    for x1, u in [(0.3, 2.0), (-1.1, -0.4)]:
        np.testing.assert_allclose(udot_gamma(Q, [x1, 0.7], [u], [], [0.2, 1]), [x1], rtol=1e-14)


def test_ddot_hv_constant_fields():
    C = constant_problem(n=2, l=0, m=1, c0=[1.0, 0.0], c=[[0.0, 1.0]])
    val, d_du, d_dv = ddot_Hv(C, [0.2, 0.1], [], [0.3], [1.0, 1.0])
    np.testing.assert_array_equal(val, [0.0])
    np.testing.assert_array_equal(d_dv, [[0.0]])
    assert d_du.shape == (1, 0)


def test_ddot_hv_slq1():
    P = instantiate("SLQ1").problem
    val, _, d_dv = ddot_Hv(P, [0, 0, 0], [], [0.0], [0, 1, 0])
    np.testing.assert_allclose(val, [1.0])
    np.testing.assert_allclose(d_dv, [[-1.0]])


@pytest.mark.parametrize("t", [0.0, 0.3, 1.0])
def test_ddot_hv_pa1_extremal(t):
    b = instantiate("PA1")
    s = b.analytic_state(t)
    val, d_du, d_dv = ddot_Hv(b.problem, s["x"], s["u"], s["v"], s["p"])
    np.testing.assert_allclose(val, [0.0], atol=1e-14)
    np.testing.assert_allclose(d_du, [[0.0]], atol=1e-14)
    np.testing.assert_allclose(d_dv, [[-1.0]], atol=1e-14)


point = st.tuples(arrays(float, 3, elements=finite), arrays(float, 1, elements=finite),
                  arrays(float, 1, elements=finite), arrays(float, 3, elements=finite))


@settings(max_examples=30, deadline=None)
@given(pt=point, i=st.integers(0, 1), j=st.integers(0, 1))
def test_bracket_antisymmetry(pt, i, j):
    P = probe().problem
    x, u, _, _ = pt
    np.testing.assert_allclose(lie_bracket_x(P, i, j, x, u), -lie_bracket_x(P, j, i, x, u), atol=1e-14)


@settings(max_examples=20, deadline=None)
@given(pt=point)
def test_ddot_hv_partials_match_fd(pt):
    P = probe().problem
    x, u, v, p = pt
    p = p + np.array([0.0, 0.0, 2.0])  # keep H_uu away from zero
    try:
        val, d_du, d_dv = ddot_Hv(P, x, u, v, p)
    except Exception:
        return  # singular H_uu at this sample
    h = 1e-6
    fu = (ddot_Hv(P, x, u + h, v, p)[0] - ddot_Hv(P, x, u - h, v, p)[0]) / (2 * h)
    fv = (ddot_Hv(P, x, u, v + h, p)[0] - ddot_Hv(P, x, u, v - h, p)[0]) / (2 * h)
    scale = max(1.0, np.max(np.abs(d_du)), np.max(np.abs(d_dv)))
    np.testing.assert_allclose(d_du[:, 0], fu, atol=1e-4 * scale)
    np.testing.assert_allclose(d_dv[:, 0], fv, atol=1e-4 * scale)


@pytest.mark.parametrize("name", ["SLQ1", "PA1", "goh-probe"])
def test_time_derivatives_consistent_along_trajectory(name, traj_at):
    """Central differences of sampled H_v and dotHv match the analytic rates at O(h^2)."""
    from singular_shooting import Grid, integrate_extremal

    errs = []
    for N in (500, 1000):
        if name == "goh-probe":
            b = probe()
            tr = integrate_extremal(b.problem, b.nu_hat.to_array(b.problem), Grid(N, b.problem.T))
        else:
            tr = traj_at(name, N)
            b = instantiate(name)
        P, h = b.problem, tr.grid.h
        ddot = np.array([ddot_Hv(P, tr.x[k], tr.u[k], tr.v[k], tr.p[k])[0] for k in range(1, N, N // 20)])
        c1 = (tr.H_v[2:] - tr.H_v[:-2]) / (2 * h)
        c2 = (tr.dotHv[2:] - tr.dotHv[:-2]) / (2 * h)
        e1 = np.max(np.abs(c1 - tr.dotHv[1:-1]))
        e2 = np.max(np.abs(c2[::N // 20][: len(ddot)] - ddot))
        errs.append((e1, e2))
    (a1, a2), (b1, b2) = errs
    scale = 1e-12
    assert b1 <= max(scale, 0.3 * a1) and b2 <= max(scale, 0.3 * a2)
    assert a1 <= 1e-3 and a2 <= 1e-3
