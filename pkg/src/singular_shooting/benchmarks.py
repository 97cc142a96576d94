"""Reference problems with closed-form extremals.

All benchmarks fix the initial state through ``eta_j = x0_j - a_j`` and leave
the terminal state free, so transversality gives ``beta = -p0`` and
``p(T) = grad_{xT} phi0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import jax.numpy as jnp
import numpy as np

from .exceptions import NotFoundError
from .problem import ControlDims, EndpointFunction, EndpointSpec, ProblemDef, VectorField

__all__ = ["Benchmark", "catalog", "instantiate", "make_pa1", "make_goh_probe", "fixed_initial_state", "terminal_cost"]

_TANH1 = float(np.tanh(1.0))


@dataclass(frozen=True, eq=False)
class Benchmark:
    """A problem together with its analytic solution."""

    name: str
    problem: ProblemDef
    nu_hat: object  # ShootingVector
    analytic_state: Callable
    reference_cost: float
    notes: str

    @property
    def def_(self):
        return self.problem


def fixed_initial_state(n, a):
    """Constraints ``eta_j(x0, xT) = x0_j - a_j``, ``j = 0..n-1``."""
    out = []
    for j in range(n):
        g = np.zeros(2 * n)
        g[j] = 1.0
        out.append(
            EndpointFunction(
                value=lambda x0, xT, j=j: x0[j] - a[j],
                grad=lambda x0, xT, g=g: jnp.asarray(g),
                hess=lambda x0, xT: jnp.zeros((2 * n, 2 * n)),
                name=f"x0[{j}]",
            )
        )
    return tuple(out)


def terminal_cost(n, k, quad=0.0):
    """Mayer cost ``phi0 = xT_k + (quad/2) xT_1^2``."""
    def value(x0, xT):
        return xT[k] + 0.5 * quad * xT[1] ** 2

    def grad(x0, xT):
        return jnp.zeros(2 * n).at[n + k].set(1.0).at[n + 1].add(quad * xT[1])

    def hess(x0, xT):
        return jnp.zeros((2 * n, 2 * n)).at[n + 1, n + 1].set(quad)

    return EndpointFunction(value, grad, hess, name="phi0")


def _shooting(x0, p0, beta):
    from .shooting import ShootingVector

    return ShootingVector(np.asarray(x0, float), np.asarray(p0, float), np.asarray(beta, float))


# ---------------------------------------------------------------------------
# NLQ1


def _nlq1():
    n = 2
    f0 = VectorField(
        value=lambda x, u: jnp.array([u[0], 0.5 * (x[0] ** 2 + u[0] ** 2)]),
        jac_x=lambda x, u: jnp.array([[0.0, 0.0], [x[0], 0.0]]),
        jac_u=lambda x, u: jnp.array([[1.0], [u[0]]]),
        hess=lambda x, u: (
            jnp.zeros((2, 2, 2)).at[1, 0, 0].set(1.0),
            jnp.zeros((2, 2, 1)),
            jnp.zeros((2, 1, 1)).at[1, 0, 0].set(1.0),
        ),
        name="f0",
    )
    prob = ProblemDef(
        ControlDims(n=2, l=1, m=0, d_eta=2),
        1.0,
        (f0,),
        EndpointSpec(terminal_cost(n, 1), fixed_initial_state(n, (1.0, 0.0))),
        name="NLQ1",
    )
    c = np.cosh(1.0)

    def state(t):
        x1 = np.cosh(1 - t) / c
        p1 = np.sinh(1 - t) / c
        x2 = 0.5 * (np.sinh(1.0) * np.cosh(1.0) - np.sinh(1 - t) * np.cosh(1 - t)) / c**2
        return dict(x=np.array([x1, x2]), u=np.array([-p1]), v=np.zeros(0), p=np.array([p1, 1.0]))

    notes = (
        "m=0 linear-quadratic problem. H = p1 u + p2 (x1^2+u^2)/2, p2 = 1, u = -p1, "
        "pdot1 = -x1, so x1'' = x1 with x1(0)=1, x1'(1)=0: x1 = cosh(1-t)/cosh 1, "
        "p1 = sinh(1-t)/cosh 1. Cost = p1(0)/2 = tanh(1)/2."
    )
    nu = _shooting([1.0, 0.0], [_TANH1, 1.0], [-_TANH1, -1.0])
    return Benchmark("NLQ1", prob, nu, state, 0.5 * _TANH1, notes)


# ---------------------------------------------------------------------------
# SLQ1


def _slq1():
    n = 3

    def f0_val(x, u):
        return jnp.array([0.0, 0.5 * (x[0] - jnp.sin(x[2])) ** 2, 1.0])

    def f0_jx(x, u):
        d = x[0] - jnp.sin(x[2])
        return jnp.zeros((3, 3)).at[1, 0].set(d).at[1, 2].set(-d * jnp.cos(x[2]))

    def f0_hess(x, u):
        d = x[0] - jnp.sin(x[2])
        c = jnp.cos(x[2])
        dxx = (
            jnp.zeros((3, 3, 3))
            .at[1, 0, 0].set(1.0)
            .at[1, 0, 2].set(-c)
            .at[1, 2, 0].set(-c)
            .at[1, 2, 2].set(c * c + d * jnp.sin(x[2]))
        )
        return dxx, jnp.zeros((3, 3, 0)), jnp.zeros((3, 0, 0))

    f0 = VectorField(f0_val, f0_jx, lambda x, u: jnp.zeros((3, 0)), f0_hess, name="f0")
    f1 = VectorField(
        lambda x, u: jnp.array([1.0, 0.0, 0.0]),
        lambda x, u: jnp.zeros((3, 3)),
        lambda x, u: jnp.zeros((3, 0)),
        lambda x, u: (jnp.zeros((3, 3, 3)), jnp.zeros((3, 3, 0)), jnp.zeros((3, 0, 0))),
        name="f1",
    )
    prob = ProblemDef(
        ControlDims(n=3, l=0, m=1, d_eta=3),
        float(np.pi),
        (f0, f1),
        EndpointSpec(terminal_cost(n, 1), fixed_initial_state(n, (0.0, 0.0, 0.0))),
        name="SLQ1",
    )

    def state(t):
        return dict(
            x=np.array([np.sin(t), 0.0, t]),
            u=np.zeros(0),
            v=np.array([np.cos(t)]),
            p=np.array([0.0, 1.0, 0.0]),
        )

    notes = (
        "l=0 totally affine problem: minimize int (x1 - sin t)^2/2 with x1' = v and a clock "
        "x3' = 1. H_v = p1; dH_v/dt = -p2 (x1 - sin x3); d2H_v/dt2 = -p2 (v - cos x3), so "
        "v = cos x3 on the singular arc, x = (sin t, 0, t), p = (0, 1, 0), cost 0."
    )
    nu = _shooting([0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0])
    return Benchmark("SLQ1", prob, nu, state, 0.0, notes)


# ---------------------------------------------------------------------------
# PA1 / PA1-neg


def make_pa1(w1=1.0, terminal_x2=0.0, name=None):
    """PA1 family: ``f0 = (u, 0, (w1 x1^2 + x2^2 + u^2)/2)``, ``f1 = (0, 1, 0)``.

    ``w1 = 1`` gives PA1, ``w1 = -5`` gives PA1-neg.  ``terminal_x2`` adds
    ``terminal_x2/2 * x2(T)^2`` to the Mayer cost ``x3(T)``; it leaves the
    extremal unchanged since ``x2 = 0`` on it.
    """
    n = 3

    def f0_val(x, u):
        return jnp.array([u[0], 0.0, 0.5 * (w1 * x[0] ** 2 + x[1] ** 2 + u[0] ** 2)])

    def f0_jx(x, u):
        return jnp.zeros((3, 3)).at[2, 0].set(w1 * x[0]).at[2, 1].set(x[1])

    def f0_ju(x, u):
        return jnp.array([[1.0], [0.0], [u[0]]])

    def f0_hess(x, u):
        dxx = jnp.zeros((3, 3, 3)).at[2, 0, 0].set(w1).at[2, 1, 1].set(1.0)
        return dxx, jnp.zeros((3, 3, 1)), jnp.zeros((3, 1, 1)).at[2, 0, 0].set(1.0)

    f0 = VectorField(f0_val, f0_jx, f0_ju, f0_hess, name="f0")
    f1 = VectorField(
        lambda x, u: jnp.array([0.0, 1.0, 0.0]),
        lambda x, u: jnp.zeros((3, 3)),
        lambda x, u: jnp.zeros((3, 1)),
        lambda x, u: (jnp.zeros((3, 3, 3)), jnp.zeros((3, 3, 1)), jnp.zeros((3, 1, 1))),
        name="f1",
    )
    if name is None:
        name = "PA1" if w1 == 1.0 else f"PA1(w1={w1:g})"
    prob = ProblemDef(
        ControlDims(n=3, l=1, m=1, d_eta=3),
        1.0,
        (f0, f1),
        EndpointSpec(terminal_cost(n, 2, quad=terminal_x2), fixed_initial_state(n, (1.0, 0.0, 0.0))),
        name=name,
    )

    if w1 > 0:
        om = np.sqrt(w1)
        c = np.cosh(om)

        def x1p1(t):
            return np.cosh(om * (1 - t)) / c, om * np.sinh(om * (1 - t)) / c

        p10 = om * np.tanh(om)
    else:
        om = np.sqrt(-w1)
        c = np.cos(om)

        def x1p1(t):
            return np.cos(om * (1 - t)) / c, -om * np.sin(om * (1 - t)) / c

        p10 = -om * np.tan(om)

    def state(t):
        x1, p1 = x1p1(t)
        # int_0^t (w1 x1^2 + u^2)/2 = (p1(0) - x1 p1)/2 by parts
        x3 = 0.5 * (p10 - x1 * p1)
        return dict(x=np.array([x1, 0.0, x3]), u=np.array([-p1]), v=np.zeros(1), p=np.array([p1, 0.0, 1.0]))

    nu = _shooting([1.0, 0.0, 0.0], [p10, 0.0, 1.0], [-p10, 0.0, -1.0])
    notes = (
        "Partially affine, controls uncoupled (H_uv = 0). H = p1 u + p2 v + p3 (w1 x1^2 + x2^2 + u^2)/2, "
        "p3 = 1, u = -p1, H_v = p2, dH_v/dt = -x2, d2H_v/dt2 = -v, so the elimination matrix "
        "is the identity and v = 0, x2 = 0. x1'' = w1 x1 with x1(0) = 1, x1'(1) = 0. "
        "Cost = p1(0)/2. A coupling term x2 u in f0 would make d/dv of d2H_v/dt2 vanish "
        "identically (degenerate elimination), hence the uncoupled form."
    )
    return Benchmark(name, prob, nu, state, 0.5 * p10, notes)


# ---------------------------------------------------------------------------
# identity probe (not an optimal control benchmark)


def make_goh_probe():
    """Nonlinear partially-affine problem with all Goh matrices nonzero.

    ``f0 = (x2 + u, -sin x1 + u^2/2, (x1^2 + x2^2 + u^2)/2)``,
    ``f1 = (cos x2, 1 + x1^2/10, 0)``, cost ``x3(T) + x1(T)^2/2 + 0.3 x1(T) x2(T)``,
    ``x(0) = (1, 0.5, 0)``, ``T = 0.5``.  Its ``nu_hat`` is an arbitrary start, not an
    extremal: the second-variation identities are algebraic along any
    solution of the state-costate system, so the probe exercises ``B``, ``M``,
    ``S`` and ``R`` where the benchmarks have them vanish.
    """
    n = 3

    def f0_val(x, u):
        return jnp.array([x[1] + u[0], -jnp.sin(x[0]) + 0.5 * u[0] ** 2,
                          0.5 * (x[0] ** 2 + x[1] ** 2 + u[0] ** 2)])

    def f0_jx(x, u):
        return jnp.array([[0.0, 1.0, 0.0], [-jnp.cos(x[0]), 0.0, 0.0], [x[0], x[1], 0.0]])

    def f0_ju(x, u):
        return jnp.array([[1.0], [u[0]], [u[0]]])

    def f0_hess(x, u):
        dxx = jnp.zeros((3, 3, 3)).at[1, 0, 0].set(jnp.sin(x[0])).at[2, 0, 0].set(1.0).at[2, 1, 1].set(1.0)
        duu = jnp.zeros((3, 1, 1)).at[1, 0, 0].set(1.0).at[2, 0, 0].set(1.0)
        return dxx, jnp.zeros((3, 3, 1)), duu

    def f1_val(x, u):
        return jnp.array([jnp.cos(x[1]), 1.0 + 0.1 * x[0] ** 2, 0.0])

    def f1_jx(x, u):
        return jnp.zeros((3, 3)).at[0, 1].set(-jnp.sin(x[1])).at[1, 0].set(0.2 * x[0])

    def f1_hess(x, u):
        dxx = jnp.zeros((3, 3, 3)).at[0, 1, 1].set(-jnp.cos(x[1])).at[1, 0, 0].set(0.2)
        return dxx, jnp.zeros((3, 3, 1)), jnp.zeros((3, 1, 1))

    def c_val(x0, xT):
        return xT[2] + 0.5 * xT[0] ** 2 + 0.3 * xT[0] * xT[1]

    def c_grad(x0, xT):
        return jnp.zeros(2 * n).at[n].set(xT[0] + 0.3 * xT[1]).at[n + 1].set(0.3 * xT[0]).at[n + 2].set(1.0)

    def c_hess(x0, xT):
        return jnp.zeros((2 * n, 2 * n)).at[n, n].set(1.0).at[n, n + 1].set(0.3).at[n + 1, n].set(0.3)

    prob = ProblemDef(
        ControlDims(n=3, l=1, m=1, d_eta=3),
        0.5,
        (VectorField(f0_val, f0_jx, f0_ju, f0_hess, name="f0"),
         VectorField(f1_val, f1_jx, lambda x, u: jnp.zeros((3, 1)), f1_hess, name="f1")),
        EndpointSpec(EndpointFunction(c_val, c_grad, c_hess, name="phi0"),
                     fixed_initial_state(n, (1.0, 0.5, 0.0))),
        name="goh-probe",
    )
    nu = _shooting([1.0, 0.5, 0.0], [0.2, 0.5, 1.0], [-0.2, -0.5, -1.0])
    notes = "Identity probe; nu_hat is an arbitrary start, reference_cost is undefined."
    return Benchmark("goh-probe", prob, nu, lambda t: None, float("nan"), notes)


_REGISTRY = {
    "NLQ1": _nlq1,
    "SLQ1": _slq1,
    "PA1": lambda: make_pa1(1.0, name="PA1"),
    "PA1-neg": lambda: make_pa1(-5.0, name="PA1-neg"),
}
_CACHE: dict = {}


def catalog():
    """Names of the registered benchmarks, in fixed order."""
    return list(_REGISTRY)


def instantiate(name: str) -> Benchmark:
    """Return the benchmark ``name`` (instances are cached)."""
    if name not in _REGISTRY:
        raise NotFoundError(f"unknown problem {name!r}; known: {', '.join(_REGISTRY)}")
    if name not in _CACHE:
        _CACHE[name] = _REGISTRY[name]()
    return _CACHE[name]
