import functools

import jax.numpy as jnp
import numpy as np
import pytest

from singular_shooting import (
    ControlDims,
    EndpointFunction,
    EndpointSpec,
    Grid,
    ProblemDef,
    VectorField,
    instantiate,
    integrate_extremal,
)
from singular_shooting.benchmarks import fixed_initial_state, make_goh_probe

TANH1 = float(np.tanh(1.0))


def zero_endpoint(n):
    return EndpointFunction(
        value=lambda x0, xT: 0.0 * xT[0],
        grad=lambda x0, xT: jnp.zeros(2 * n),
        hess=lambda x0, xT: jnp.zeros((2 * n, 2 * n)),
        name="phi0",
    )


def linear_endpoint(n, k):
    """``phi0 = xT_k``."""
    g = np.zeros(2 * n)
    g[n + k] = 1.0
    return EndpointFunction(
        value=lambda x0, xT: xT[k],
        grad=lambda x0, xT: jnp.asarray(g),
        hess=lambda x0, xT: jnp.zeros((2 * n, 2 * n)),
        name="phi0",
    )


def constant_field(c, l):
    c = jnp.asarray(c, dtype=float)
    n = c.shape[0]
    return VectorField(
        value=lambda x, u: c + 0.0 * x,
        jac_x=lambda x, u: jnp.zeros((n, n)),
        jac_u=lambda x, u: jnp.zeros((n, l)),
        hess=lambda x, u: (jnp.zeros((n, n, n)), jnp.zeros((n, n, l)), jnp.zeros((n, l, l))),
    )


def linear_field(A, Bm):
    """``f(x, u) = A x + B u`` with exact Jacobians."""
    A, Bm = jnp.asarray(A, dtype=float), jnp.asarray(Bm, dtype=float)
    n, l = Bm.shape
    return VectorField(
        value=lambda x, u: A @ x + Bm @ u,
        jac_x=lambda x, u: A,
        jac_u=lambda x, u: Bm,
        hess=lambda x, u: (jnp.zeros((n, n, n)), jnp.zeros((n, n, l)), jnp.zeros((n, l, l))),
    )


def constant_problem(n=2, l=0, m=1, c0=None, c=None, fixed_x0=True):
    """All fields constant; ``phi0 = 0``; optionally ``x0`` fixed at 0."""
    c0 = np.zeros(n) if c0 is None else c0
    cs = [np.zeros(n)] * m if c is None else c
    fields = [constant_field(c0, l)] + [constant_field(ci, l) for ci in cs]
    eta = fixed_initial_state(n, np.zeros(n)) if fixed_x0 else ()
    return ProblemDef(ControlDims(n, l, m, len(eta)), 1.0, fields, EndpointSpec(zero_endpoint(n), eta),
                      name="constant")


@pytest.fixture(scope="session")
def bench():
    return instantiate


@pytest.fixture(scope="session")
def traj_at():
    """Integrated benchmark extremal at ``nu_hat`` (cached by name and N)."""
    cache = {}

    def get(name, N=2000):
        if (name, N) not in cache:
            b = instantiate(name)
            cache[name, N] = integrate_extremal(b.problem, b.nu_hat.to_array(b.problem), Grid(N, b.problem.T))
        return cache[name, N]

    return get


@functools.lru_cache(maxsize=None)
def probe():
    """Shared instance of the identity probe (compiled kernels are per instance)."""
    return make_goh_probe()


def hand_traj(problem, N, x, u, v, p, beta=None):
    """Trajectory from prescribed node samples (diagnostics zeroed)."""
    from singular_shooting import Trajectory

    grid = Grid(N, problem.T)
    N1 = N + 1

    def nodes(a, dim):
        a = np.asarray(a, float)
        return np.broadcast_to(a, (N1, dim)).copy() if a.ndim <= 1 else a

    x, u, v, p = nodes(x, problem.n), nodes(u, problem.l), nodes(v, problem.m), nodes(p, problem.n)
    beta = np.zeros(problem.dims.d_eta) if beta is None else np.asarray(beta, float)
    nu = np.concatenate([x[0], p[0], beta])
    z = np.zeros(N1)
    return Trajectory(grid, x, u, v, p, z, np.zeros((N1, problem.l)), np.zeros((N1, problem.m)),
                      np.zeros((N1, problem.m)), z, np.zeros(N1, int), z, problem=problem, nu=nu)


def twisted_problem():
    """``m = 2`` with ``f_2 = (x_1, 0)``: ``H_vx F_v`` has a nonzero antisymmetric part when ``p_1 != 0``."""
    zero = lambda x, u: jnp.zeros((2, 2))
    none = lambda x, u: jnp.zeros((2, 0))
    f0 = VectorField(lambda x, u: 0.0 * x, zero, none)
    f1 = VectorField(lambda x, u: jnp.array([1.0, 0.0]) + 0.0 * x, zero, none)
    f2 = VectorField(lambda x, u: jnp.array([x[0], 0.0]), lambda x, u: jnp.array([[1.0, 0.0], [0.0, 0.0]]), none)
    return ProblemDef(ControlDims(2, 0, 2), 1.0, (f0, f1, f2), EndpointSpec(zero_endpoint(2)), name="twisted")


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if rep.when == "call":
                lines += [v for k, v in rep.user_properties if k == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1][1:].rstrip(":"))):
            terminalreporter.write_line(line)
