"""Pointwise elimination of the controls from ``H_u = 0`` and ``d2H_v/dt2 = 0``.

The solver is a damped Newton iteration on ``G(u, v) = (H_u, d2H_v/dt2)``
written with ``jax.lax`` control flow so that it can run inside compiled
integration loops.  Its forward-mode derivative with respect to ``(x, p)``
is defined by the implicit function theorem, i.e. the linearized controls
solve ``Lin H_u = 0``, ``Lin d2H_v/dt2 = 0`` through the elimination matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

from . import _validation as val
from ._linalg import cond_small, solve_small
from .exceptions import EliminationError, NonConvergenceError
from .hamiltonian import COND_MAX, elim_G, elim_jac, ham_first
from .problem import ProblemDef

__all__ = [
    "EliminationResult",
    "eliminate_controls",
    "elimination_jacobian",
    "DEFAULT_TOL",
    "DEFAULT_MAX_ITER",
    "MAX_HALVINGS",
]

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 50
MAX_HALVINGS = 20

# status codes carried through compiled loops
OK, SINGULAR, NOCONV, NONFINITE = 0, 1, 2, 3


@dataclass
class EliminationResult:
    u: np.ndarray
    v: np.ndarray
    iterations: int
    residual_norm: float
    jacobian_cond: float


def _inf(a):
    return jnp.max(jnp.abs(a), initial=0.0)


def newton_traced(problem, x, p, z0, tol, max_iter):
    """Damped Newton; returns ``(z, info)`` with info = (iters, resid, cond, status).

    The Jacobian is factored at least once, so ``cond`` (the condition
    number of the last factored Jacobian) is always meaningful.  A singular
    Jacobian is accepted only when the controls are inert: the Jacobian is
    exactly zero, the residual already meets ``tol`` and the state-costate
    right-hand side does not depend on ``(u, v)``.
    """

    def G(z):
        return elim_G(problem, x, p, z)

    def rhs(z):
        xdot, _, _, _, H_x, _ = ham_first(problem, x, z[:l], z[l:], p)
        return jnp.concatenate([xdot, H_x])

    l = problem.l

    def inert(J):
        # conditions and flow both independent of the controls: any z is a root
        return jnp.all(J == 0) & jnp.all(jax.jacfwd(rhs)(z0) == 0)

    # state: z, G(z), |G(z)|, iterations, status, cond, first
    def cond_fn(s):
        _, _, r, it, st, _, first = s
        return first | ((r > tol) & (it < max_iter) & (st == OK))

    def body(s):
        z, g, r, it, st, _, _ = s
        J = jax.jacfwd(G)(z)
        cnd = cond_small(J)
        bad = ~jnp.isfinite(cnd) | (cnd > COND_MAX) | ~jnp.isfinite(r)
        ok_inert = jax.lax.cond(bad & (r <= tol) & jnp.all(J == 0), inert, lambda J: False, J)
        skip = bad | (r <= tol)
        step = -solve_small(jnp.where(bad, jnp.eye(J.shape[0]), J), g)

        # try t = 1, 1/2, ... (at most MAX_HALVINGS halvings) until |G| decreases
        def bt_cond(b):
            t, k, gt = b
            return (k == 0) | ((_inf(gt) >= r) & (k <= MAX_HALVINGS))

        def bt_body(b):
            t, k, _ = b
            t = jnp.where(k == 0, 1.0, 0.5 * t)
            return t, k + 1, G(z + t * step)

        t, _, gt = jax.lax.cond(
            skip,
            lambda: (0.0, 0, g),
            lambda: jax.lax.while_loop(bt_cond, bt_body, (1.0, 0, g)),
        )
        st = jnp.where(bad & ~ok_inert, jnp.where(jnp.isfinite(r), SINGULAR, NONFINITE), st)
        return z + t * step, gt, _inf(gt), jnp.where(skip, it, it + 1), st, cnd, False

    g0 = G(z0)
    init = (z0, g0, _inf(g0), jnp.asarray(0), jnp.asarray(OK), jnp.asarray(1.0), True)
    z, g, r, it, st, cnd, _ = jax.lax.while_loop(cond_fn, body, init)
    st = jnp.where((st == OK) & ~(r <= tol), jnp.where(jnp.isfinite(r), NOCONV, NONFINITE), st)
    info = jnp.stack([it.astype(float), r, cnd, st.astype(float)])
    return z, info


def make_eliminator(problem, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Traceable ``elim(x, p, z0) -> (z, info)`` with implicit forward derivative."""

    @jax.custom_jvp
    def elim(x, p, z0):
        return newton_traced(problem, x, p, z0, tol, max_iter)

    @elim.defjvp
    def _jvp(primals, tangents):
        x, p, z0 = primals
        dx, dp, _ = tangents
        z, info = elim(x, p, z0)
        n = x.shape[0]
        # one Jacobian of G in (x, p, z) on the primal, then the tangents
        w = jnp.concatenate([x, p, z])
        Jw = jax.jacfwd(lambda w: elim_G(problem, w[:n], w[n:2 * n], w[2 * n:]))(w)
        rhs = Jw[:, :n] @ dx + Jw[:, n:2 * n] @ dp
        Jz = Jw[:, 2 * n:]
        # inert controls (zero elimination matrix) carry no tangent
        zero = jnp.all(Jz == 0)
        dz = jnp.where(zero, 0.0, -solve_small(jnp.where(zero, jnp.eye(Jz.shape[0]), Jz), rhs))
        return (z, info), (dz, jnp.zeros_like(info))

    return elim


def _builder(problem, tol, max_iter):
    def run(x, p, z0):
        return newton_traced(problem, x, p, z0, tol, max_iter)

    return jax.jit(run)


def raise_for_status(info, time=None):
    """Translate an info vector from the traced solver into an exception."""
    it, r, cnd, st = (float(a) for a in info)
    where = "" if time is None else f" at t={time:.17g}"
    if st == SINGULAR:
        raise EliminationError(
            f"elimination matrix is singular (cond={cnd:.3g}){where}", time=time, cond=cnd
        )
    if st == NOCONV:
        raise NonConvergenceError(
            f"control elimination did not converge in {int(it)} iterations "
            f"(residual {r:.3g}){where}",
            time=time,
            residual=r,
        )
    if st == NONFINITE:
        raise EliminationError(f"non-finite values in control elimination{where}", time=time)


def eliminate_controls(
    problem: ProblemDef,
    x,
    p,
    warm_start=None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> EliminationResult:
    """Solve ``H_u = 0``, ``d2H_v/dt2 = 0`` for ``(u, v)`` at given ``(x, p)``.

    Parameters
    ----------
    warm_start : tuple (u0, v0), optional
        Starting controls; defaults to zeros.
    tol : float
        Absolute tolerance on the infinity norm of the residual.

    Raises
    ------
    EliminationError
        when the elimination matrix has condition number above 1e12.
    NonConvergenceError
        when ``max_iter`` iterations do not reach ``tol``.
    """
    n, l, m = problem.n, problem.l, problem.m
    x = val.check_vector(x, n, "x")
    p = val.check_vector(p, n, "p")
    tol = val.check_tol(tol)
    max_iter = val.check_count(max_iter, "max_iter", 1)
    if warm_start is None:
        z0 = np.zeros(l + m)
    else:
        u0, v0 = warm_start
        z0 = np.concatenate([val.check_vector(u0, l, "u0"), val.check_vector(v0, m, "v0")])
    fn = problem.kernel(("elim", tol, max_iter), lambda: _builder(problem, tol, max_iter))
    z, info = fn(x, p, z0)
    info = np.asarray(info)
    raise_for_status(info)
    z = np.asarray(z)
    return EliminationResult(z[:l], z[l:], int(info[0]), float(info[1]), float(info[2]))


def elimination_jacobian(problem: ProblemDef, x, u, v, p) -> np.ndarray:
    """``[[H_uu, H_uv], [-d/du, -d/dv]]`` applied to ``d2H_v/dt2``."""
    x, u, v, p = val.check_xuvp(problem, x, u, v, p)
    fn = problem.kernel("elimjac", lambda: jax.jit(lambda x, p, z: elim_jac(problem, x, p, z)))
    return np.asarray(fn(x, p, np.concatenate([u, v])))
