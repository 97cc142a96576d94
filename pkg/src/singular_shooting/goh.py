"""Goh's change of variables and the second variations.

Given a critical direction ``(xbar0, ubar, vbar)`` with ``xbar`` solving the
linearized state equation, the transformed direction is

    ybar(t) = int_0^t vbar,    xibar = xbar - F_v ybar,    hbar = ybar(T).

The second variation ``Omega`` in the original variables equals ``Omega_P``
in the transformed ones; when ``V`` vanishes the ``vbar`` term drops out and
the form extends to ``Omega_P2``, which depends on ``(xibar, ubar, ybar, hbar)``
only.

All time integrals use the composite trapezoid rule on the trajectory nodes.
Matrix time derivatives (``dF_v/dt``, ``dH_vx/dt``, ``dS/dt``) are computed by
the chain rule along the extremal with ``udot = Gamma``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import jax
import jax.numpy as jnp
import numpy as np
import scipy.integrate

from .exceptions import InputError, PreconditionError
from .hamiltonian import Multiplier, _gamma_core, _vv
from .integrator import Grid, Trajectory, half_grid, integrate_linearized, integrate_state
from .problem import ProblemDef, lagrangian_data

__all__ = [
    "Direction",
    "TransformedDirection",
    "GohMatrices",
    "goh_transform",
    "goh_matrices",
    "goh_matrices_at",
    "bracket_R",
    "omega",
    "omega_P",
    "omega_P2",
    "gamma_order",
    "integrate_xi",
    "transform_by_ode",
    "transform_by_ode_batch",
    "random_directions",
    "map_ls_to_lqs",
    "LQSResiduals",
    "expansion_remainders",
    "V_TOL",
]

V_TOL = 1e-6  # relative to max |H_vx F_v| along the trajectory

# sign of B in the assembly; flipping it is the mutation used in the tests
_B_SIGN = 1.0


@dataclass
class Direction:
    """Critical direction sampled on the trajectory nodes.

    ``xbar`` must solve ``xbar' = F_x xbar + F_u ubar + F_v vbar`` with
    ``xbar(0) = x0bar``.
    """

    x0bar: np.ndarray
    ubar: np.ndarray  # (N+1, l)
    vbar: np.ndarray  # (N+1, m)
    xbar: np.ndarray  # (N+1, n)


@dataclass
class TransformedDirection:
    xi0bar: np.ndarray
    ubar: np.ndarray  # (N+1, l)
    ybar: np.ndarray  # (N+1, m)
    hbar: np.ndarray  # (m,)
    xibar: np.ndarray  # (N+1, n)


@dataclass
class GohMatrices:
    """Node matrices with a leading node axis, plus the endpoint data of ``g``.

    ``H_ux`` is ``l x n``, ``H_vx`` is ``m x n`` and ``H_uv`` is ``l x m``.
    """

    F_x: np.ndarray
    F_u: np.ndarray
    F_v: np.ndarray
    B: np.ndarray
    M: np.ndarray
    E: np.ndarray
    S: np.ndarray
    V: np.ndarray
    R: np.ndarray
    H_xx: np.ndarray
    H_ux: np.ndarray
    H_vx: np.ndarray
    H_uu: np.ndarray
    H_uv: np.ndarray
    HvxFv: np.ndarray
    ell_hess: np.ndarray  # (2n, 2n)
    Fv_T: np.ndarray
    Hvx_T: np.ndarray
    S_T: np.ndarray

    def node(self, k: int) -> "GohMatrices":
        """The entry at node ``k`` (arrays without the node axis)."""
        per_node = {
            name: getattr(self, name)[k]
            for name in ("F_x", "F_u", "F_v", "B", "M", "E", "S", "V", "R",
                         "H_xx", "H_ux", "H_vx", "H_uu", "H_uv", "HvxFv")
        }
        return GohMatrices(**per_node, ell_hess=self.ell_hess, Fv_T=self.Fv_T,
                           Hvx_T=self.Hvx_T, S_T=self.S_T)


# ---------------------------------------------------------------------------
# traced node assembly


def _sym(a):
    return 0.5 * (a + a.T)


def node_matrices(problem, x, u, v, p, b_sign=1.0):
    gamma, xdot, pdot, (f, jx, ju), (dxx, dxu, _), H_uu = _gamma_core(problem, x, u, v, p)
    vv = _vv(v)
    F_x = jnp.einsum("k,kij->ij", vv, jx)
    F_u = jnp.einsum("k,kij->ij", vv, ju)
    F_v = f[1:].T
    H_xx = jnp.einsum("k,i,kiab->ab", vv, p, dxx)
    H_ux = jnp.einsum("k,i,kiab->ba", vv, p, dxu)
    H_vx = jnp.einsum("i,kia->ka", p, jx[1:])
    H_uv = jnp.einsum("i,kib->bk", p, ju[1:])
    # chain rule along (xdot, Gamma)
    Fv_dot = jnp.einsum("kab,b->ak", jx[1:], xdot) + jnp.einsum("kab,b->ak", ju[1:], gamma)
    Hvx_dot = (
        jnp.einsum("c,kca->ka", pdot, jx[1:])
        + jnp.einsum("c,kcab,b->ka", p, dxx[1:], xdot)
        + jnp.einsum("c,kcab,b->ka", p, dxu[1:], gamma)
    )
    B = b_sign * (F_x @ F_v - Fv_dot)
    M = F_v.T @ H_xx - Hvx_dot - H_vx @ F_x
    E = F_v.T @ H_ux.T - H_vx @ F_u
    P = H_vx @ F_v
    S, V = _sym(P), 0.5 * (P - P.T)
    S_dot = _sym(Hvx_dot @ F_v + H_vx @ Fv_dot)
    HB = H_vx @ B
    R = F_v.T @ H_xx @ F_v - (HB + HB.T) - S_dot
    return dict(F_x=F_x, F_u=F_u, F_v=F_v, B=B, M=M, E=E, S=S, V=V, R=R, H_xx=H_xx,
                H_ux=H_ux, H_vx=H_vx, H_uu=H_uu, H_uv=H_uv, HvxFv=P)


def node_bracket_R(problem, x, u, v, p):
    """``R`` from iterated Lie brackets (valid when ``V`` vanishes)."""
    gamma, _, _, (f, jx, ju), (dxx, dxu, _), _ = _gamma_core(problem, x, u, v, p)
    vv = _vv(v)
    # b[k, i] = [f_k, f_i] and its x-Jacobian
    a = jnp.einsum("kab,ib->kia", jx, f)
    b = a - jnp.swapaxes(a, 0, 1)
    da = jnp.einsum("kcba,ib->kica", dxx, f) + jnp.einsum("kcb,iba->kica", jx, jx)
    db = da - jnp.swapaxes(da, 0, 1)
    # outer[j, k, i] = [f_j, b_ki] = Jx_j b_ki - Db_ki f_j
    outer = jnp.einsum("jab,kib->jkia", jx, b) - jnp.einsum("kiab,jb->jkia", db, f)
    term1 = -jnp.einsum("a,k,jkia->ij", p, vv, outer)
    m = problem.m
    jx1, ju1, dxu1, f1 = jx[1:], ju[1:], dxu[1:], f[1:]
    mix = (
        2.0 * jnp.einsum("iab,jbc->ijac", jx1, ju1)
        + jnp.einsum("jab,ibc->ijac", jx1, ju1)
        + jnp.einsum("iabc,jb->ijac", dxu1, f1)
    )
    term2 = -jnp.einsum("a,ijac,c->ij", p, mix, gamma) if problem.l else jnp.zeros((m, m))
    return term1[1:, 1:] + term2


def _kernels(problem):
    n, l = problem.n, problem.l

    def mats(xs, us, vs, ps):
        return jax.vmap(lambda x, u, v, p: node_matrices(problem, x, u, v, p, _B_SIGN))(xs, us, vs, ps)

    def brR(xs, us, vs, ps):
        return jax.vmap(lambda x, u, v, p: node_bracket_R(problem, x, u, v, p))(xs, us, vs, ps)

    def ell(beta, x0, xT):
        return lagrangian_data(problem, beta, x0, xT)[2]

    return dict(mats=jax.jit(mats), brR=jax.jit(brR), ell=jax.jit(ell))


def kernels(problem: ProblemDef):
    # keyed on the sign so a patched assembly never reuses a stale kernel
    return problem.kernel(("goh", _B_SIGN), lambda: _kernels(problem))


def _beta(problem, traj, lam):
    if lam is not None:
        return np.asarray(lam.beta, float).reshape(problem.dims.d_eta)
    if traj.nu is None:
        raise InputError("trajectory carries no shooting vector; pass the multiplier")
    return np.asarray(traj.nu, float)[2 * problem.n:]


# ---------------------------------------------------------------------------
# public API


def goh_matrices(problem: ProblemDef, traj: Trajectory, lam: Optional[Multiplier] = None) -> GohMatrices:
    """Assemble ``B, M, E, S, V, R`` (and the Hamiltonian blocks) at all nodes."""
    k = kernels(problem)
    out = {name: np.asarray(a) for name, a in k["mats"](traj.x, traj.u, traj.v, traj.p).items()}
    beta = _beta(problem, traj, lam)
    ell_hess = np.asarray(k["ell"](beta, traj.x[0], traj.x[-1]))
    return GohMatrices(**out, ell_hess=ell_hess, Fv_T=out["F_v"][-1], Hvx_T=out["H_vx"][-1],
                       S_T=out["S"][-1])


def goh_matrices_at(problem: ProblemDef, traj: Trajectory, node: int,
                    lam: Optional[Multiplier] = None) -> GohMatrices:
    """Matrices at a single node (endpoint data is always included)."""
    N = traj.grid.N
    if isinstance(node, (bool, np.bool_)) or not isinstance(node, (int, np.integer)) or not 0 <= node <= N:
        raise InputError(f"node index {node!r} out of range 0..{N}")
    return goh_matrices(problem, traj, lam).node(int(node))


def bracket_R(problem: ProblemDef, traj: Trajectory) -> np.ndarray:
    """``R`` at all nodes from the Lie-bracket formula.

    Raises
    ------
    PreconditionError
        if ``V`` does not vanish along ``traj`` (the formula needs ``V = 0``).
    """
    G = goh_matrices(problem, traj)
    _check_V(G)
    return np.asarray(kernels(problem)["brR"](traj.x, traj.u, traj.v, traj.p))


def goh_transform(direction: Direction, traj: Trajectory, G: Optional[GohMatrices] = None) -> TransformedDirection:
    """Apply Goh's transformation on the nodes of ``traj``.

    ``ybar`` is the cumulative trapezoid integral of ``vbar``.
    """
    grid = traj.grid
    vb = _nodes(direction.vbar, grid.N + 1)
    m = vb.shape[1]
    if m:
        yb = scipy.integrate.cumulative_trapezoid(vb, dx=grid.h, axis=0, initial=0.0)
    else:
        yb = np.zeros((grid.N + 1, 0))
    F_v = _Fv_nodes(traj, m) if G is None else G.F_v
    xb = np.asarray(direction.xbar, float)
    xi = xb - np.einsum("kij,kj->ki", F_v, yb)
    return TransformedDirection(
        xi0bar=xi[0].copy(),
        ubar=_nodes(direction.ubar, grid.N + 1),
        ybar=yb,
        hbar=yb[-1].copy(),
        xibar=xi,
    )


def _xi_steps(G: GohMatrices, h: float):
    """Step maps ``xi[k+1] = A[k] xi[k] + C[k] (c[k] + c[k+1])``, cached on ``G``."""
    cache = G.__dict__.setdefault("_xi_steps", {})
    if h not in cache:
        n = G.F_x.shape[1]
        eye = np.eye(n)
        lhs = eye - 0.5 * h * G.F_x[1:]
        C = np.linalg.solve(lhs, np.broadcast_to(0.5 * h * eye, lhs.shape))
        A = np.linalg.solve(lhs, eye + 0.5 * h * G.F_x[:-1])
        cache[h] = (A, C)
    return cache[h]


def _batch_nodes(a, K, N1, dim):
    a = np.asarray(a, dtype=float)
    return np.zeros((K, N1, 0)) if dim == 0 else a.reshape(K, N1, dim)


def integrate_xi(G: GohMatrices, grid: Grid, xi0, ubar, ybar) -> np.ndarray:
    """Trapezoid solution of ``xi' = F_x xi + F_u ubar + B ybar`` on the nodes.

    This is the transformed state equation; it uses ``B`` where the pointwise
    transform ``xbar - F_v ybar`` does not.  Leading batch axes on ``xi0``
    (K, n), ``ubar`` (K, N+1, l) and ``ybar`` (K, N+1, m) are supported.
    """
    N1 = grid.N + 1
    xi0 = np.asarray(xi0, dtype=float)
    batched = xi0.ndim == 2
    x0 = xi0 if batched else xi0[None]
    K = x0.shape[0]
    ub = _batch_nodes(ubar, K, N1, G.F_u.shape[2])
    yb = _batch_nodes(ybar, K, N1, G.B.shape[2])
    c = np.einsum("kab,jkb->jka", G.F_u, ub) + np.einsum("kab,jkb->jka", G.B, yb)
    A, C = _xi_steps(G, grid.h)
    d = np.einsum("kab,jkb->jka", C, c[:, :-1] + c[:, 1:])
    xi = np.empty((K, N1, x0.shape[1]))
    xi[:, 0] = x0
    for k in range(grid.N):
        xi[:, k + 1] = xi[:, k] @ A[k].T + d[:, k]
    return xi if batched else xi[0]


def transform_by_ode(direction: Direction, traj: Trajectory, G: GohMatrices) -> TransformedDirection:
    """Goh transform with ``xibar`` from the transformed state equation."""
    td = goh_transform(direction, traj, G)
    td.xibar = integrate_xi(G, traj.grid, td.xi0bar, td.ubar, td.ybar)
    return td


def transform_by_ode_batch(directions, traj: Trajectory, G: GohMatrices) -> list:
    """``transform_by_ode`` over many directions with one batched recurrence."""
    tds = [goh_transform(d, traj, G) for d in directions]
    if not tds:
        return tds
    N1 = traj.grid.N + 1
    xi = integrate_xi(
        G, traj.grid,
        np.stack([t.xi0bar for t in tds]),
        np.stack([_nodes(t.ubar, N1) for t in tds]),
        np.stack([_nodes(t.ybar, N1) for t in tds]),
    )
    for t, x in zip(tds, xi):
        t.xibar = x
    return tds


def _Fv_nodes(traj, m):
    if m == 0:
        return np.zeros((traj.grid.N + 1, traj.x.shape[1], 0))
    problem = traj.problem
    if problem is None:
        raise InputError("trajectory carries no problem definition")
    return goh_matrices(problem, traj).F_v


def _trap(grid, values):
    return float(np.dot(grid.weights, values))


def _endpoint(G, z):
    return 0.5 * z @ G.ell_hess @ z


def omega(problem: ProblemDef, lam: Optional[Multiplier], traj: Trajectory, direction: Direction,
          G: Optional[GohMatrices] = None) -> float:
    """Second variation in the original variables."""
    G = goh_matrices(problem, traj, lam) if G is None else G
    xb, ub, vb = direction.xbar, _nodes(direction.ubar, traj.grid.N + 1), _nodes(direction.vbar, traj.grid.N + 1)
    integrand = (
        0.5 * np.einsum("ka,kab,kb->k", xb, G.H_xx, xb)
        + np.einsum("ka,kab,kb->k", ub, G.H_ux, xb)
        + np.einsum("ka,kab,kb->k", vb, G.H_vx, xb)
        + 0.5 * np.einsum("ka,kab,kb->k", ub, G.H_uu, ub)
        + np.einsum("ka,kba,kb->k", vb, G.H_uv, ub)
    )
    return _endpoint(G, np.concatenate([xb[0], xb[-1]])) + _trap(traj.grid, integrand)


def _nodes(a, N1):
    """``(N+1, dim)`` view of node samples; empty inputs give ``dim = 0``."""
    a = np.asarray(a, float)
    if a.size == 0:
        return np.zeros((N1, 0))
    return a.reshape(N1, -1)


def g_form(G: GohMatrices, xi0, xiT, h) -> float:
    """Endpoint form ``g(xi0, xiT, h)``."""
    z = np.concatenate([xi0, xiT + G.Fv_T @ h])
    return _endpoint(G, z) + float(h @ (G.Hvx_T @ xiT + 0.5 * G.S_T @ h))


def _p2_integrand(G, td):
    xi, ub, yb = td.xibar, td.ubar, td.ybar
    return (
        0.5 * np.einsum("ka,kab,kb->k", xi, G.H_xx, xi)
        + np.einsum("ka,kab,kb->k", ub, G.H_ux, xi)
        + np.einsum("ka,kab,kb->k", yb, G.M, xi)
        + 0.5 * np.einsum("ka,kab,kb->k", ub, G.H_uu, ub)
        + np.einsum("ka,kab,kb->k", yb, G.E, ub)
        + 0.5 * np.einsum("ka,kab,kb->k", yb, G.R, yb)
    )


def omega_P(problem: ProblemDef, lam: Optional[Multiplier], traj: Trajectory, tdir: TransformedDirection,
            vbar, G: Optional[GohMatrices] = None) -> float:
    """Second variation in the transformed variables, including ``vbar^T V ybar``."""
    G = goh_matrices(problem, traj, lam) if G is None else G
    vb = _nodes(vbar, traj.grid.N + 1)
    integrand = _p2_integrand(G, tdir) + np.einsum("ka,kab,kb->k", vb, G.V, tdir.ybar)
    return g_form(G, tdir.xi0bar, tdir.xibar[-1], tdir.hbar) + _trap(traj.grid, integrand)


def _check_V(G, tol=V_TOL):
    vn = np.max(np.abs(G.V), axis=(1, 2), initial=0.0)
    scale = max(1.0, float(np.max(np.abs(G.HvxFv), initial=0.0)))
    if vn.size and vn.max() > tol * scale:
        k = int(np.argmax(vn))
        raise PreconditionError(f"V does not vanish: |V| = {vn[k]:.3g} at node {k}")


def omega_P2(problem: ProblemDef, lam: Optional[Multiplier], traj: Trajectory, tdir: TransformedDirection,
             G: Optional[GohMatrices] = None) -> float:
    """Extension of the transformed form that does not involve ``vbar``.

    Raises
    ------
    PreconditionError
        if ``V`` is not negligible along ``traj``.
    """
    G = goh_matrices(problem, traj, lam) if G is None else G
    _check_V(G)
    return g_form(G, tdir.xi0bar, tdir.xibar[-1], tdir.hbar) + _trap(traj.grid, _p2_integrand(G, tdir))


def gamma_order(tdir: TransformedDirection, grid: Grid) -> float:
    """``|xi0|^2 + |h|^2 + int (|u|^2 + |y|^2)``."""
    ub = _nodes(tdir.ubar, grid.N + 1)
    yb = _nodes(tdir.ybar, grid.N + 1)
    integrand = np.sum(ub ** 2, axis=1) + np.sum(yb ** 2, axis=1)
    xi0, h = np.ravel(tdir.xi0bar), np.ravel(tdir.hbar)
    return float(xi0 @ xi0 + h @ h) + _trap(grid, integrand)


# ---------------------------------------------------------------------------
# sampled directions


def _modes(rng, K, dim, n_modes, T, t):
    """Random trigonometric polynomials of low degree, shape (K, len(t), dim)."""
    out = np.zeros((K, len(t), dim))
    for k in range(n_modes + 1):
        a = rng.standard_normal((K, 1, dim)) / (1.0 + k)
        b = rng.standard_normal((K, 1, dim)) / (1.0 + k)
        w = np.pi * k / T
        out += a * np.cos(w * t)[None, :, None] + b * np.sin(w * t)[None, :, None]
    return out


def random_directions(problem: ProblemDef, traj: Trajectory, K: int, seed: int = 0,
                      n_modes: int = 3) -> list:
    """``K`` seeded smooth directions consistent with the linearized equation.

    ``ubar`` and ``vbar`` are random trigonometric polynomials; ``xbar`` is
    integrated by RK4 along the extremal with the controls sampled at the
    stage times.
    """
    rng = np.random.default_rng(seed)
    n, l, m = problem.n, problem.l, problem.m
    grid = traj.grid
    th = half_grid(grid)
    x0 = rng.standard_normal((K, n))
    uh = _modes(rng, K, l, n_modes, grid.T, th)
    vh = _modes(rng, K, m, n_modes, grid.T, th)
    xs = integrate_linearized(problem, traj.nu, grid, x0, uh, vh, traj=traj)
    return [Direction(x0[k], uh[k, ::2], vh[k, ::2], xs[k]) for k in range(K)]


# ---------------------------------------------------------------------------
# linearized system -> transformed optimality system


@dataclass
class LQSResiduals:
    """Infinity-norm violations of the transformed optimality system, per seed.

    Boundary rows are measured against the image of the seed's linearized
    boundary defect, so every entry is zero for an exact (LS) solution.
    """

    state: np.ndarray  # xi' = F_x xi + F_u u + B y
    costate: np.ndarray  # -chi' = chi F_x + xi H_xx + u H_ux + y M
    chi0: np.ndarray
    chiT: np.ndarray
    h_cond: np.ndarray
    endpoint: np.ndarray
    H_u: np.ndarray
    H_y: np.ndarray

    @property
    def per_seed(self) -> np.ndarray:
        return np.max(np.vstack([self.state, self.costate, self.chi0, self.chiT, self.h_cond,
                                 self.endpoint, self.H_u, self.H_y]), axis=0)

    @property
    def max(self) -> float:
        return float(np.max(self.per_seed, initial=0.0))


def _ddt(a, h):
    """Fourth-order finite-difference time derivative along axis 0."""
    d = np.empty_like(a)
    d[2:-2] = (a[:-4] - 8 * a[1:-3] + 8 * a[3:-1] - a[4:]) / (12 * h)
    c0 = np.array([-25, 48, -36, 16, -3]) / (12 * h)
    c1 = np.array([-3, -10, 18, -6, 1]) / (12 * h)
    d[0] = np.tensordot(c0, a[:5], axes=1)
    d[1] = np.tensordot(c1, a[:5], axes=1)
    d[-1] = -np.tensordot(c0, a[::-1][:5], axes=1)
    d[-2] = -np.tensordot(c1, a[::-1][:5], axes=1)
    return d


def map_ls_to_lqs(problem: ProblemDef, traj: Trajectory, ls_solution) -> LQSResiduals:
    """Transform linearized-system solutions and measure the (LQS) residuals.

    Parameters
    ----------
    ls_solution : LinearizedSolutions
        Output of ``shooting_jacobian(..., return_solutions=True)`` at the
        shooting vector of ``traj``; the trailing axis indexes the seeds.

    Notes
    -----
    ``ybar`` uses cumulative Simpson quadrature here and time derivatives a
    fourth-order difference formula, so that the residuals are dominated by
    the integrator error rather than by the checking scheme.
    """
    n, l, m = problem.n, problem.l, problem.m
    grid = traj.grid
    h = grid.h
    xb, pb, ub, vb = ls_solution.xbar, ls_solution.pbar, ls_solution.ubar, ls_solution.vbar
    bb = ls_solution.beta_bar
    d = problem.dims.d_eta
    K = xb.shape[-1]
    G = goh_matrices(problem, traj)
    if m:
        yb = scipy.integrate.cumulative_simpson(vb, dx=h, axis=0, initial=0.0)
    else:
        yb = np.zeros((grid.N + 1, 0, K))
    hb = yb[-1]
    xi = xb - np.einsum("tij,tjk->tik", G.F_v, yb)
    chi = pb + np.einsum("tjk,tja->tak", yb, G.H_vx)

    state = _ddt(xi, h) - (
        np.einsum("tab,tbk->tak", G.F_x, xi) + np.einsum("tab,tbk->tak", G.F_u, ub)
        + np.einsum("tab,tbk->tak", G.B, yb)
    )
    costate = -_ddt(chi, h) - (
        np.einsum("tak,tab->tbk", chi, G.F_x) + np.einsum("tak,tab->tbk", xi, G.H_xx)
        + np.einsum("tak,tab->tbk", ub, G.H_ux) + np.einsum("tak,tab->tbk", yb, G.M)
    )
    Hu = (
        np.einsum("tak,tab->tbk", chi, G.F_u) + np.einsum("tba,tak->tbk", G.H_ux, xi)
        + np.einsum("tab,tak->tbk", G.H_uu, ub) + np.einsum("tak,tab->tbk", yb, G.E)
    )
    Hy = (
        np.einsum("tak,tab->tbk", chi, G.B) + np.einsum("tba,tak->tbk", G.M, xi)
        + np.einsum("tba,tak->tbk", G.E, ub) + np.einsum("tab,tak->tbk", G.R, yb)
    )

    # linearized boundary defects of the seeds: eta, p0 + D_x0 l, pT - D_xT l, H_v(T), dH_v/dt(0)
    r = np.asarray(ls_solution.residual)
    d1, d2, d3 = r[:d], r[d:d + n], r[d + n:d + 2 * n]
    d4, d5 = r[d + 2 * n:d + 2 * n + m], r[d + 2 * n + m:]
    L = G.ell_hess
    from .problem import eta_data  # local: traced helper used eagerly here
    _, deta = (np.asarray(a) for a in eta_data(problem, traj.x[0], traj.x[-1]))
    xi0, xiT = xi[0], xi[-1]
    zT = xiT + G.Fv_T @ hb
    chi0_res = chi[0] + (L[:n, :n] @ xi0 + L[:n, n:] @ zT + deta[:, :n].T @ bb) - d2
    chiT_res = chi[-1] - (L[n:, :n] @ xi0 + L[n:, n:] @ zT + G.Hvx_T.T @ hb + deta[:, n:].T @ bb) - d3
    h_res = (G.Fv_T.T @ (L[n:, :n] @ xi0 + L[n:, n:] @ zT + deta[:, n:].T @ bb)
             + G.Hvx_T @ xiT + G.S_T @ hb) - (d4 - G.Fv_T.T @ d3)
    eta_res = deta[:, :n] @ xi0 + deta[:, n:] @ zT - d1
    # with V = 0 the y-stationarity row equals minus the time derivative of Lin H_v
    Hy = Hy + d5[None]

    def inf(a):
        a = a.reshape(-1, K) if a.size else np.zeros((1, K))
        return np.max(np.abs(a), axis=0)

    return LQSResiduals(state=inf(state), costate=inf(costate), chi0=inf(chi0_res), chiT=inf(chiT_res),
                        h_cond=inf(h_res), endpoint=inf(eta_res), H_u=inf(Hu), H_y=inf(Hy))


# ---------------------------------------------------------------------------
# second-order expansion of the Lagrangian


def expansion_remainders(problem: ProblemDef, nu, grid: Grid, s_values, seed: int = 0,
                         n_modes: int = 2, fine_traj: Optional[Trajectory] = None):
    """``|L(w + s dw) - L(w) - s^2 Omega(dw)|`` for a feasible perturbation family.

    ``dw`` is a seeded smooth control direction with ``xbar0`` in the kernel of
    the linearized initial constraints; for each ``s`` the perturbed state is
    integrated exactly (RK4 with the perturbed controls), so the Lagrangian
    reduces to the endpoint Lagrangian ``l(x0, xT)`` with the fixed multiplier.

    Returns
    -------
    dict with ``s``, ``remainder``, ``omega`` and the fitted log-log ``slope``.
    """
    from .integrator import integrate_extremal

    n, l, m = problem.n, problem.l, problem.m
    nu = np.asarray(nu.to_array(problem) if hasattr(nu, "to_array") else nu, float)
    # controls at RK4 stage times = nodes of the doubled grid
    fine = integrate_extremal(problem, nu, grid.refine(2)) if fine_traj is None else fine_traj
    traj = integrate_extremal(problem, nu, grid)
    rng = np.random.default_rng(seed)
    th = half_grid(grid)
    uh = _modes(rng, 1, l, n_modes, grid.T, th)[0]
    vh = _modes(rng, 1, m, n_modes, grid.T, th)[0]
    x0bar = np.zeros(n)  # all benchmark constraints fix the initial state
    xbar = integrate_linearized(problem, nu, grid, x0bar, uh, vh)
    direction = Direction(x0bar, uh[::2], vh[::2], xbar)
    om = omega(problem, None, traj, direction)
    beta = nu[2 * n:]

    def ell(x0, xT):
        return float(lagrangian_data(problem, jnp.asarray(beta), jnp.asarray(x0), jnp.asarray(xT))[0])

    s = np.asarray(s_values, float)
    x0h = nu[:n]
    starts = np.vstack([x0h] + [x0h + si * x0bar for si in s])
    U = np.stack([fine.u] + [fine.u + si * uh for si in s])
    Vv = np.stack([fine.v] + [fine.v + si * vh for si in s])
    xs = integrate_state(problem, grid, starts, U, Vv)
    L0 = ell(xs[0, 0], xs[0, -1])
    rem = np.array([abs(ell(xs[i + 1, 0], xs[i + 1, -1]) - L0 - si ** 2 * om) for i, si in enumerate(s)])
    with np.errstate(divide="ignore"):
        slope = float(np.polyfit(np.log(s), np.log(rem), 1)[0]) if np.all(rem > 0) else float("nan")
    return dict(s=s, remainder=rem, omega=om, slope=slope)
