import numpy as np
import pytest

from conftest import TANH1, constant_problem, probe
from singular_shooting import (
    BlowUpError,
    EliminationError,
    Grid,
    InputError,
    dynamics_eval,
    instantiate,
    integrate_extremal,
    integrate_linearized,
    integrate_state,
)
from singular_shooting.integrator import half_grid


def test_grid():
    g = Grid(4, 2.0)
    assert g.h == 0.5
    np.testing.assert_array_equal(g.nodes, [0, 0.5, 1.0, 1.5, 2.0])
    np.testing.assert_allclose(g.weights.sum(), 2.0)
    assert g.refine().N == 8
    assert half_grid(g).size == 9
    with pytest.raises(InputError):
        Grid(1, 1.0)
    with pytest.raises(InputError):
        Grid(4, 0.0)


def test_zero_dynamics_constant_solution():
    P = constant_problem(n=2, l=0, m=1)
    nu = np.array([1.0, -2.0, 0.5, 3.0, -1.0, -2.0])
    tr = integrate_extremal(P, nu, Grid(20, 1.0))
    np.testing.assert_array_equal(tr.x[-1], nu[:2])
    np.testing.assert_array_equal(tr.p[-1], nu[2:4])


def test_slq1_analytic_endpoint(traj_at):
    tr = traj_at("SLQ1", 2000)
    assert np.max(np.abs(tr.x[-1] - [0, 0, np.pi])) <= 1e-8
    assert np.max(np.abs(tr.p[-1] - [0, 1, 0])) <= 1e-8


def test_nlq1_cost(traj_at):
    tr = traj_at("NLQ1", 2000)
    assert abs(tr.x[-1, 1] - 0.5 * TANH1) <= 1e-8
    assert abs(tr.x[-1, 1] - 0.3807970780) <= 1e-8


def test_grid_horizon_mismatch():
    b = instantiate("SLQ1")
    with pytest.raises(InputError):
        integrate_extremal(b.problem, b.nu_hat, Grid(100, 1.0))
    with pytest.raises(InputError):
        integrate_extremal(b.problem, np.zeros(5), Grid(100, np.pi))


def test_singular_elimination_reports_time():
    # p = 0 on PA1: the elimination matrix vanishes at t = 0
    b = instantiate("PA1")
    nu = b.nu_hat.to_array(b.problem).copy()
    nu[3:6] = 0.0
    with pytest.raises(EliminationError) as exc:
        integrate_extremal(b.problem, nu, Grid(50, 1.0))
    assert exc.value.time == 0.0


def test_blow_up_detected():
    from conftest import linear_endpoint, linear_field
    from singular_shooting import ControlDims, EndpointSpec, ProblemDef, VectorField
    import jax.numpy as jnp

    # xdot = x^2 + u escapes in finite time; H_u = p1 + p2 u with a cost-rate state
    f0 = VectorField(
        value=lambda x, u: jnp.array([x[0] ** 2 * 50.0 + u[0], 0.5 * u[0] ** 2]),
        jac_x=lambda x, u: jnp.array([[100.0 * x[0], 0.0], [0.0, 0.0]]),
        jac_u=lambda x, u: jnp.array([[1.0], [u[0]]]),
    )
    P = ProblemDef(ControlDims(2, 1, 0), 1.0, (f0,), EndpointSpec(linear_endpoint(2, 1)))
    with pytest.raises((BlowUpError, EliminationError)):
        integrate_extremal(P, np.array([1.0, 0.0, 0.0, 1.0]), Grid(100, 1.0))


def test_csv(tmp_path, traj_at):
    tr = traj_at("PA1", 2000)
    path = tmp_path / "t.csv"
    tr.to_csv(path)
    head = path.read_text().splitlines()[0]
    assert head == "t,x1,x2,x3,u1,v1,p1,p2,p3,H,Hv1,dotHv1"
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data.shape == (2001, 12)
    np.testing.assert_array_equal(data[:, 1:4], tr.x)  # 17 digits round-trip exactly


@pytest.mark.parametrize("name", ["NLQ1", "SLQ1", "PA1", "PA1-neg"])
def test_rk4_order(name, traj_at):
    b = instantiate(name)
    errs = []
    for N in (250, 500, 1000, 2000):
        tr = traj_at(name, N)
        errs.append(np.max(np.abs(tr.x[-1] - b.analytic_state(b.problem.T)["x"])))
    ratios = [a / c for a, c in zip(errs[:-1], errs[1:])]
    assert all(12 <= r <= 20 for r in ratios[:2]), ratios


@pytest.mark.parametrize("name", ["NLQ1", "SLQ1", "PA1", "PA1-neg"])
def test_stationarity_along_extremal(name, traj_at):
    tr = traj_at(name, 2000)
    assert np.max(np.abs(tr.H - tr.H[0])) <= 1e-8
    assert np.max(np.abs(tr.H_v), initial=0.0) <= 1e-6
    assert np.max(np.abs(tr.dotHv), initial=0.0) <= 1e-6
    assert np.max(np.abs(tr.H_u), initial=0.0) <= 1e-10
    assert np.all(np.isfinite(tr.x)) and np.all(np.isfinite(tr.p))


def test_analytic_states_match(traj_at):
    for name in ("NLQ1", "SLQ1", "PA1", "PA1-neg"):
        b, tr = instantiate(name), traj_at(name, 2000)
        for k in (0, 700, 2000):
            s = b.analytic_state(tr.t[k])
            np.testing.assert_allclose(tr.x[k], s["x"], atol=1e-9)
            np.testing.assert_allclose(tr.p[k], s["p"], atol=1e-9)
            np.testing.assert_allclose(np.concatenate([tr.u[k], tr.v[k]]),
                                       np.concatenate([s["u"], s["v"]]), atol=1e-9)


def test_linearized_matches_state_differences():
    """The linearized flow is the derivative of the state flow at fixed extremal coefficients."""
    b = probe()
    P, grid = b.problem, Grid(400, b.problem.T)
    nu = b.nu_hat.to_array(P)
    tr = integrate_extremal(P, nu, grid)
    th = half_grid(grid)
    ub = np.column_stack([np.cos(2 * th)])
    vb = np.column_stack([np.sin(3 * th) + 0.5])
    x0b = np.array([0.3, -0.2, 0.1])
    xl = integrate_linearized(P, nu, grid, x0b, ub, vb, traj=tr)
    # nominal controls on the half grid: nodes from traj, midpoints from the recorded stages
    uh = np.empty((2 * grid.N + 1, 1))
    vh = np.empty((2 * grid.N + 1, 1))
    uh[::2], vh[::2] = tr.u, tr.v
    uh[1::2], vh[1::2] = tr.stage_z[:, 0, :1], tr.stage_z[:, 0, 1:]
    eps = 1e-6
    xp = integrate_state(P, grid, tr.x[0] + eps * x0b, uh + eps * ub, vh + eps * vb)
    xm = integrate_state(P, grid, tr.x[0] - eps * x0b, uh - eps * ub, vh - eps * vb)
    fd = (xp - xm) / (2 * eps)
    # stage 2 and 3 controls differ slightly; agreement is at the O(h^2) level
    assert np.max(np.abs(fd - xl)) <= 1e-3 * max(1.0, np.max(np.abs(xl)))


def test_linearized_equation_residual():
    """Trapezoid check of xbar' = F_x xbar + F_u ubar + F_v vbar at the nodes."""
    b = instantiate("PA1")
    P, grid = b.problem, Grid(1000, 1.0)
    nu = b.nu_hat.to_array(P)
    th = half_grid(grid)
    ub, vb = np.cos(th)[:, None], (1 + th)[:, None]
    xl = integrate_linearized(P, nu, grid, np.zeros(3), ub, vb)
    tr = integrate_extremal(P, nu, grid)
    rhs = []
    for k in range(grid.N + 1):
        _, Fx, Fu, Fv = dynamics_eval(P, tr.x[k], tr.u[k], tr.v[k])
        rhs.append(Fx @ xl[k] + Fu @ ub[2 * k] + Fv @ vb[2 * k])
    rhs = np.array(rhs)
    d = (xl[1:] - xl[:-1]) / grid.h - 0.5 * (rhs[1:] + rhs[:-1])
    assert np.max(np.abs(d)) <= 1e-5
