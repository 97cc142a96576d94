"""Pre-Hamiltonian ``H = p . F(x, u, v)`` and its derivatives.

The time-derivative chain ``H_v -> dH_v/dt -> d2H_v/dt2`` is evaluated by
the chain rule along the dynamics ``xdot = F``, ``pdot = -H_x`` with the
nonlinear control moving at rate ``udot = Gamma`` and the affine control
held fixed.

Sign convention: ``dH_v_i/dt = p sum_j v_j [f_i, f_j]^x`` with
``[f_i, f_j]^x = (D_x f_i) f_j - (D_x f_j) f_i`` and ``v_0 = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

from . import _validation as val
from ._linalg import cond_small, solve_small
from .exceptions import EliminationError, EvaluationError, InputError
from .problem import ProblemDef, field_data, field_hessians

__all__ = [
    "Multiplier",
    "HamiltonianDerivs",
    "hamiltonian",
    "lie_bracket_x",
    "dot_Hv",
    "udot_gamma",
    "ddot_Hv",
    "COND_MAX",
]

COND_MAX = 1e12


@dataclass(frozen=True)
class Multiplier:
    """Normal multiplier ``(alpha0 = 1, beta, p0)``."""

    beta: np.ndarray
    p0: np.ndarray

    @property
    def alpha0(self) -> float:
        return 1.0


@dataclass
class HamiltonianDerivs:
    H: float
    H_x: np.ndarray
    H_u: np.ndarray
    H_v: np.ndarray
    H_xx: np.ndarray
    H_ux: np.ndarray
    H_vx: np.ndarray
    H_uu: np.ndarray
    H_uv: np.ndarray


# ---------------------------------------------------------------------------
# traced kernels


def _vv(v):
    return jnp.concatenate([jnp.ones(1), v])


def ham_first(problem, x, u, v, p):
    """``(xdot, F_x, F_u, F_v, H_x, data)`` where data = (f, jx, ju)."""
    f, jx, ju = field_data(problem, x, u)
    vv = _vv(v)
    xdot = vv @ f
    F_x = jnp.einsum("k,kij->ij", vv, jx)
    F_u = jnp.einsum("k,kij->ij", vv, ju)
    return xdot, F_x, F_u, f[1:].T, p @ F_x, (f, jx, ju)


def ham_blocks(problem, x, u, v, p):
    """All first and second derivative blocks as a dict of jnp arrays."""
    f, jx, ju = field_data(problem, x, u)
    dxx, dxu, duu = field_hessians(problem, x, u)
    vv = _vv(v)
    F = vv @ f
    return dict(
        H=p @ F,
        H_x=p @ jnp.einsum("k,kij->ij", vv, jx),
        H_u=p @ jnp.einsum("k,kij->ij", vv, ju),
        H_v=f[1:] @ p,
        H_xx=jnp.einsum("k,i,kiab->ab", vv, p, dxx),
        H_ux=jnp.einsum("k,i,kiab->ba", vv, p, dxu),
        H_vx=jnp.einsum("i,kia->ka", p, jx[1:]),
        H_uu=jnp.einsum("k,i,kiab->ab", vv, p, duu),
        H_uv=jnp.einsum("i,kib->bk", p, ju[1:]),
    )


def brackets(jx, f):
    """All brackets ``b[i, j] = Jx_i f_j - Jx_j f_i`` for ``i, j = 0..m``."""
    a = jnp.einsum("iab,jb->ija", jx, f)
    return a - jnp.swapaxes(a, 0, 1)


def dot_hv_k(problem, x, u, v, p):
    f, jx, _ = field_data(problem, x, u)
    b = brackets(jx, f)  # (m+1, m+1, n)
    return jnp.einsum("ija,a,j->i", b[1:], p, _vv(v))


def _gamma_core(problem, x, u, v, p):
    """Return (Gamma, xdot, pdot, data, hessians, H_uu)."""
    f, jx, ju = field_data(problem, x, u)
    dxx, dxu, duu = field_hessians(problem, x, u)
    vv = _vv(v)
    xdot = vv @ f
    F_x = jnp.einsum("k,kij->ij", vv, jx)
    F_u = jnp.einsum("k,kij->ij", vv, ju)
    pdot = -(p @ F_x)
    H_ux = jnp.einsum("k,i,kiab->ba", vv, p, dxu)
    H_uu = jnp.einsum("k,i,kiab->ab", vv, p, duu)
    rhs = -(pdot @ F_u + H_ux @ xdot)
    if problem.l:
        # singular H_uu: Gamma is undefined; use 0 and let callers report it
        sing = ~(cond_small(H_uu) <= COND_MAX)
        gamma = solve_small(jnp.where(sing, jnp.eye(problem.l), H_uu), jnp.where(sing, 0.0, rhs))
    else:
        gamma = jnp.zeros(0)
    return gamma, xdot, pdot, (f, jx, ju), (dxx, dxu, duu), H_uu


def ddot_hv_k(problem, x, u, v, p):
    """Value of d2H_v/dt2 (affine control held fixed)."""
    gamma, xdot, pdot, (f, jx, ju), (dxx, dxu, _), _ = _gamma_core(problem, x, u, v, p)
    vv = _vv(v)
    # time derivatives of the field data along (xdot, Gamma)
    fdot = jnp.einsum("kab,b->ka", jx, xdot) + jnp.einsum("kab,b->ka", ju, gamma)
    jxdot = jnp.einsum("kabc,c->kab", dxx, xdot) + jnp.einsum("kabc,c->kab", dxu, gamma)
    b = brackets(jx, f)
    a = jnp.einsum("iab,jb->ija", jxdot, f) + jnp.einsum("iab,jb->ija", jx, fdot)
    bdot = a - jnp.swapaxes(a, 0, 1)
    return jnp.einsum("j,ija->i", vv, jnp.einsum("a,ija->ija", pdot, b[1:]) + jnp.einsum("a,ija->ija", p, bdot[1:]))


def elim_G(problem, x, p, z):
    """G(u, v) = (H_u, d2H_v/dt2) as a single vector, z = (u, v)."""
    l = problem.l
    u, v = z[:l], z[l:]
    f, jx, ju = field_data(problem, x, u)
    H_u = p @ jnp.einsum("k,kij->ij", _vv(v), ju)
    return jnp.concatenate([H_u, ddot_hv_k(problem, x, u, v, p)])


def elim_jac(problem, x, p, z):
    """The matrix [[H_uu, H_uv], [-d/du, -d/dv]] of d2H_v/dt2."""
    l = problem.l
    dG = jax.jacfwd(elim_G, argnums=3)(problem, x, p, z)
    return dG.at[l:].multiply(-1.0)


def _build(problem):
    def ham(x, u, v, p):
        return ham_blocks(problem, x, u, v, p)

    def brk(x, u):
        f, jx, _ = field_data(problem, x, u)
        return brackets(jx, f)

    def dhv(x, u, v, p):
        return dot_hv_k(problem, x, u, v, p)

    def gam(x, u, v, p):
        g, _, _, _, _, huu = _gamma_core(problem, x, u, v, p)
        cond = jnp.linalg.cond(huu) if problem.l else jnp.asarray(1.0)
        return g, cond

    def ddhv(x, u, v, p):
        value = ddot_hv_k(problem, x, u, v, p)
        d_du = jax.jacfwd(ddot_hv_k, argnums=2)(problem, x, u, v, p)
        d_dv = jax.jacfwd(ddot_hv_k, argnums=3)(problem, x, u, v, p)
        return value, d_du.reshape(problem.m, problem.l), d_dv.reshape(problem.m, problem.m)

    return dict(ham=jax.jit(ham), brk=jax.jit(brk), dhv=jax.jit(dhv), gam=jax.jit(gam), ddhv=jax.jit(ddhv))


def kernels(problem: ProblemDef):
    return problem.kernel("ham", lambda: _build(problem))


def _finite(arrs, what, where):
    for a in arrs:
        if not np.all(np.isfinite(a)):
            raise EvaluationError(f"non-finite {what} at {where}")


# ---------------------------------------------------------------------------
# public API


def hamiltonian(problem: ProblemDef, x, u, v, p) -> HamiltonianDerivs:
    """Evaluate ``H`` and its first and second derivative blocks.

    Row covectors are returned as 1-D arrays.  ``H_vx`` row ``i`` is
    ``p . D_x f_i``; ``H_uv`` column ``i`` is ``(p . D_u f_i)^T``.
    """
    x, u, v, p = val.check_xuvp(problem, x, u, v, p)
    out = {k: np.asarray(a) for k, a in kernels(problem)["ham"](x, u, v, p).items()}
    _finite(out.values(), "Hamiltonian derivatives", f"x={x}, u={u}, v={v}")
    out["H"] = float(out["H"])
    return HamiltonianDerivs(**out)


def lie_bracket_x(problem: ProblemDef, i: int, j: int, x, u) -> np.ndarray:
    """``[f_i, f_j]^x = (D_x f_i) f_j - (D_x f_j) f_i`` at ``(x, u)``."""
    for k, name in ((i, "i"), (j, "j")):
        if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or not 0 <= k <= problem.m:
            raise InputError(f"field index {name}={k!r} out of range 0..{problem.m}")
    x, u = val.check_xu(problem, x, u)
    return np.asarray(kernels(problem)["brk"](x, u))[i, j]


def dot_Hv(problem: ProblemDef, x, u, v, p) -> np.ndarray:
    """Time derivative of ``H_v`` along the dynamics, shape ``(m,)``."""
    x, u, v, p = val.check_xuvp(problem, x, u, v, p)
    return np.asarray(kernels(problem)["dhv"](x, u, v, p))


def udot_gamma(problem: ProblemDef, x, u, v, p) -> np.ndarray:
    """Rate ``Gamma`` of the nonlinear control keeping ``H_u = 0``.

    Solves ``H_uu Gamma = -(F_u^T pdot + H_ux xdot)``; the ``vdot`` term is
    dropped (``H_uv`` is structurally zero on the class of problems treated).

    Raises
    ------
    EliminationError
        if ``cond(H_uu) > 1e12``.
    """
    x, u, v, p = val.check_xuvp(problem, x, u, v, p)
    if problem.l == 0:
        return np.zeros(0)
    g, cond = kernels(problem)["gam"](x, u, v, p)
    cond = float(cond)
    if not np.isfinite(cond) or cond > COND_MAX:
        raise EliminationError(f"H_uu is singular (cond={cond:.3g})", cond=cond)
    return np.asarray(g)


def ddot_Hv(problem: ProblemDef, x, u, v, p):
    """Second time derivative of ``H_v`` and its partials.

    Returns
    -------
    value : (m,) ndarray
    d_du : (m, l) ndarray
    d_dv : (m, m) ndarray
    """
    if problem.l:
        udot_gamma(problem, x, u, v, p)  # raises on singular H_uu
    x, u, v, p = val.check_xuvp(problem, x, u, v, p)
    value, d_du, d_dv = (np.asarray(a) for a in kernels(problem)["ddhv"](x, u, v, p))
    _finite((value, d_du, d_dv), "d2H_v/dt2", f"x={x}, u={u}, v={v}")
    return value, d_du, d_dv
