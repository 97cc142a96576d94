"""Fixed-step RK4 integration of the coupled state-costate system.

The controls are eliminated at every RK4 stage (warm-started from the
previous stage), so the integrated vector field is
``(F(x, U(x, p), V(x, p)), -H_x(x, U, V, p))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import jax
import jax.numpy as jnp
import numpy as np

from . import _validation as val
from .elimination import DEFAULT_MAX_ITER, DEFAULT_TOL, OK, make_eliminator, raise_for_status
from .exceptions import BlowUpError, InputError
from .hamiltonian import dot_hv_k, ham_blocks, ham_first
from .problem import ProblemDef

__all__ = [
    "Grid",
    "Trajectory",
    "integrate_extremal",
    "integrate_linearized",
    "integrate_state",
    "stage_coefficients",
    "half_grid",
]

_STAGE_C = (0.5, 0.5, 1.0, 1.0)  # time offsets of stages 2, 3, 4 and the post-step node


@dataclass(frozen=True)
class Grid:
    """Uniform grid ``t_k = k T / N``, ``k = 0..N``."""

    N: int
    T: float

    def __post_init__(self):
        object.__setattr__(self, "N", val.check_grid_size(self.N))
        object.__setattr__(self, "T", val.check_positive(self.T, "T"))

    @property
    def h(self) -> float:
        return self.T / self.N

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.N + 1) * (self.T / self.N)

    @property
    def weights(self) -> np.ndarray:
        """Composite trapezoid weights."""
        w = np.full(self.N + 1, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w

    def refine(self, factor=2):
        return Grid(self.N * factor, self.T)


def half_grid(grid: Grid) -> np.ndarray:
    """Times of RK4 stage evaluations: nodes and midpoints, ``2N + 1`` values."""
    return np.arange(2 * grid.N + 1) * (0.5 * grid.h)


@dataclass
class Trajectory:
    """Node samples of an extremal and the per-node diagnostics."""

    grid: Grid
    x: np.ndarray
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    H: np.ndarray
    H_u: np.ndarray
    H_v: np.ndarray
    dotHv: np.ndarray
    Huv_norm: np.ndarray
    iterations: np.ndarray
    residual: np.ndarray
    problem: Optional[ProblemDef] = field(default=None, repr=False)
    nu: Optional[np.ndarray] = field(default=None, repr=False)
    # states and controls at RK4 stages 2-4 of every step, when recorded
    stage_y: Optional[np.ndarray] = field(default=None, repr=False)
    stage_z: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def t(self):
        return self.grid.nodes

    def to_csv(self, path):
        """Write the trajectory with 17 significant digits."""
        n, l, m = self.x.shape[1], self.u.shape[1], self.v.shape[1]
        cols = (
            ["t"]
            + [f"x{i + 1}" for i in range(n)]
            + [f"u{i + 1}" for i in range(l)]
            + [f"v{i + 1}" for i in range(m)]
            + [f"p{i + 1}" for i in range(n)]
            + ["H"]
            + [f"Hv{i + 1}" for i in range(m)]
            + [f"dotHv{i + 1}" for i in range(m)]
        )
        data = np.column_stack(
            [self.t, self.x, self.u, self.v, self.p, self.H, self.H_v, self.dotHv]
        )
        np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")


# ---------------------------------------------------------------------------
# traced flows


def _rhs(problem, y, z):
    n, l = problem.n, problem.l
    xdot, _, _, _, H_x, _ = ham_first(problem, y[:n], z[:l], z[l:], y[n:])
    return jnp.concatenate([xdot, -H_x])


_C_PREV = (0.5, 0.5, 1.0, 0.0)
_C_ACC = (0.0, 0.0, 0.0, 1.0 / 6.0)
_W_ACC = (2.0, 2.0, 1.0, 0.0)


def extremal_flow(problem, N, T, elim, x0, p0, z0, with_stages=False):
    """Traced RK4 flow.

    Returns node arrays ``ys (N+1, 2n)``, ``zs (N+1, l+m)``, node info
    ``(N+1, 4)`` and stage info ``(N, 4, 4)``; with ``with_stages`` also the
    states ``(N, 3, 2n)`` and controls ``(N, 3, l+m)`` of stages 2-4.

    Stages 2-4 and the post-step node are driven by one inner scan so that
    the elimination solver is traced once.
    """
    n = problem.n
    h = T / N
    y0 = jnp.concatenate([x0, p0])
    zi, info0 = elim(x0, p0, z0)
    coef = jnp.array([_C_PREV, _C_ACC, _W_ACC]).T  # (4, 3)

    def step(carry, _):
        y, z = carry
        k1 = _rhs(problem, y, z)

        def stage(c, cs):
            kprev, acc, zprev = c
            ys = y + h * (cs[0] * kprev + cs[1] * acc)
            zs, info = elim(ys[:n], ys[n:], zprev)
            ks = _rhs(problem, ys, zs)
            return (ks, acc + cs[2] * ks, zs), (ys, zs, info)

        _, (yst, zst, ist) = jax.lax.scan(stage, (k1, k1, z), coef)
        yn, zn = yst[3], zst[3]
        out = (yn, zn, ist[3], ist)
        return (yn, zn), (out + (yst[:3], zst[:3]) if with_stages else out)

    _, outs = jax.lax.scan(step, (y0, zi), None, length=N)
    ys, zs, infos, sts = outs[:4]
    ys = jnp.concatenate([y0[None], ys])
    zs = jnp.concatenate([zi[None], zs])
    infos = jnp.concatenate([info0[None], infos])
    if with_stages:
        return ys, zs, infos, sts, outs[4], outs[5]
    return ys, zs, infos, sts


def _diag_kernel(problem):
    n, l = problem.n, problem.l

    def one(y, z):
        x, p, u, v = y[:n], y[n:], z[:l], z[l:]
        b = ham_blocks(problem, x, u, v, p)
        return (
            b["H"],
            b["H_u"],
            b["H_v"],
            dot_hv_k(problem, x, u, v, p),
            jnp.max(jnp.abs(b["H_uv"]), initial=0.0),
        )

    return jax.jit(jax.vmap(one))


def _flow_kernel(problem, N, T, tol, max_iter):
    elim = make_eliminator(problem, tol, max_iter)

    def run(x0, p0, z0):
        return extremal_flow(problem, N, T, elim, x0, p0, z0, with_stages=True)

    return jax.jit(run)


def flow_kernel(problem, N, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    T = problem.T
    return problem.kernel(("flow", N, tol, max_iter), lambda: _flow_kernel(problem, N, T, tol, max_iter))


def check_flow(grid, ys, infos, sts):
    """Raise the first failure (in time order) recorded by a traced flow."""
    infos = np.asarray(infos)
    sts = np.asarray(sts)
    ys = np.asarray(ys)
    h, t = grid.h, grid.nodes
    if infos[0, 3] != OK:
        raise_for_status(infos[0], time=0.0)
    bad_y = ~np.all(np.isfinite(ys), axis=1)
    bad_s = np.any(sts[..., 3] != OK, axis=1)
    first_y = int(np.argmax(bad_y)) if bad_y.any() else None
    first_s = int(np.argmax(bad_s)) if bad_s.any() else None
    if first_s is not None and (first_y is None or first_s + 1 <= first_y):
        j = int(np.argmax(sts[first_s, :, 3] != OK))
        tm = t[first_s] + _STAGE_C[j] * h
        raise_for_status(sts[first_s, j], time=float(tm))
    if first_y is not None:
        raise BlowUpError(f"non-finite state/costate at t={t[first_y]:.17g}", time=float(t[first_y]))


def build_trajectory(problem, grid, ys, zs, infos, nu=None):
    n, l = problem.n, problem.l
    ys, zs, infos = np.asarray(ys), np.asarray(zs), np.asarray(infos)
    diag = problem.kernel("diag", lambda: _diag_kernel(problem))
    H, H_u, H_v, dHv, huv = (np.asarray(a) for a in diag(ys, zs))
    return Trajectory(
        grid=grid,
        x=ys[:, :n],
        u=zs[:, :l],
        v=zs[:, l:],
        p=ys[:, n:],
        H=H,
        H_u=H_u.reshape(len(ys), l),
        H_v=H_v.reshape(len(ys), problem.m),
        dotHv=dHv.reshape(len(ys), problem.m),
        Huv_norm=huv,
        iterations=infos[:, 0].astype(int),
        residual=infos[:, 1],
        problem=problem,
        nu=None if nu is None else np.asarray(nu, float),
    )


def _split_nu(problem, nu):
    from .shooting import ShootingVector

    if isinstance(nu, ShootingVector):
        return nu.to_array(problem)
    return val.check_vector(nu, problem.dims.n_unknowns, "nu")


def integrate_extremal(
    problem: ProblemDef,
    nu,
    grid: Grid,
    controls_guess=None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> Trajectory:
    """Integrate the optimality system from ``nu = (x0, p0, beta)``.

    Parameters
    ----------
    nu : ShootingVector or array of length ``2n + d_eta``
    grid : Grid
        Must have ``grid.T == problem.T``.
    controls_guess : tuple (u0, v0), optional
        Warm start for the elimination at ``t = 0`` (default: zeros).

    Raises
    ------
    EliminationError, NonConvergenceError
        with the failing time attached.
    BlowUpError
        if the state or costate becomes non-finite.
    """
    if not isinstance(grid, Grid):
        raise InputError("grid must be a Grid")
    if abs(grid.T - problem.T) > 1e-12 * problem.T:
        raise InputError(f"grid horizon {grid.T} differs from problem horizon {problem.T}")
    nu = _split_nu(problem, nu)
    n, l, m = problem.n, problem.l, problem.m
    if controls_guess is None:
        z0 = np.zeros(l + m)
    else:
        z0 = np.concatenate([
            val.check_vector(controls_guess[0], l, "u0"),
            val.check_vector(controls_guess[1], m, "v0"),
        ])
    ys, zs, infos, sts, sy, sz = flow_kernel(problem, grid.N, tol, max_iter)(nu[:n], nu[n:2 * n], z0)
    check_flow(grid, ys, infos, sts)
    traj = build_trajectory(problem, grid, ys, zs, infos, nu)
    traj.stage_y, traj.stage_z = np.asarray(sy), np.asarray(sz)
    return traj


# ---------------------------------------------------------------------------
# linear state equations along an extremal


def _coef_kernel(problem):
    n, l = problem.n, problem.l

    def coef(y, z):
        _, F_x, F_u, F_v, _, _ = ham_first(problem, y[:n], z[:l], z[l:], y[n:])
        return F_x, F_u, F_v

    return jax.jit(jax.vmap(jax.vmap(coef)))


def _linrk4_kernel(h):
    def run(Fx, Fu, Fv, xb0, ubh, vbh):
        """Fx: (N, 4, n, n) stage matrices; ubh, vbh: (2N+1, .) half-grid controls."""
        N = Fx.shape[0]

        def step(xb, k):
            A, Bu, Bv = Fx[k], Fu[k], Fv[k]
            us = (ubh[2 * k], ubh[2 * k + 1], ubh[2 * k + 1], ubh[2 * k + 2])
            vs = (vbh[2 * k], vbh[2 * k + 1], vbh[2 * k + 1], vbh[2 * k + 2])

            def f(s, x):
                return A[s] @ x + Bu[s] @ us[s] + Bv[s] @ vs[s]

            q1 = f(0, xb)
            q2 = f(1, xb + 0.5 * h * q1)
            q3 = f(2, xb + 0.5 * h * q2)
            q4 = f(3, xb + h * q3)
            xn = xb + (h / 6.0) * (q1 + 2.0 * q2 + 2.0 * q3 + q4)
            return xn, xn

        _, xs = jax.lax.scan(step, xb0, jnp.arange(N))
        return jnp.concatenate([xb0[None], xs])

    return jax.jit(jax.vmap(run, in_axes=(None, None, None, 0, 0, 0)))


def stage_coefficients(problem, traj: Trajectory):
    """``(F_x, F_u, F_v)`` at the four RK4 stages of every step, ``(N, 4, ...)``.

    Uses the stage samples recorded by :func:`integrate_extremal`.
    """
    if traj.stage_y is None:
        raise InputError("trajectory has no recorded RK4 stages; use integrate_extremal")
    ys = np.concatenate([np.concatenate([traj.x, traj.p], axis=1)[:-1, None], traj.stage_y], axis=1)
    zs = np.concatenate([np.concatenate([traj.u, traj.v], axis=1)[:-1, None], traj.stage_z], axis=1)
    fn = problem.kernel("coef", lambda: _coef_kernel(problem))
    return tuple(np.asarray(a) for a in fn(ys, zs))


def integrate_linearized(problem, nu, grid: Grid, x0bar, ubar_half, vbar_half,
                         tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, traj: Optional[Trajectory] = None):
    """Solve ``xbar' = F_x xbar + F_u ubar + F_v vbar`` along the extremal of ``nu``.

    The coefficient matrices are evaluated at the RK4 stages of the extremal
    integration, so the result is consistent with :func:`integrate_extremal`.

    Parameters
    ----------
    x0bar : (n,) or (K, n) array
    ubar_half, vbar_half : (2N+1, l), (2N+1, m) arrays (or batched with a
        leading K axis) sampling the controls at :func:`half_grid` times.
    traj : Trajectory, optional
        The extremal of ``nu`` on ``grid`` if already available.

    Returns
    -------
    (N+1, n) or (K, N+1, n) array
    """
    n, l, m, N = problem.n, problem.l, problem.m, grid.N
    if traj is None or traj.stage_y is None:
        traj = integrate_extremal(problem, nu, grid, tol=tol, max_iter=max_iter)
    elif traj.grid.N != N:
        raise InputError("trajectory grid does not match")
    xb = np.asarray(x0bar, float)
    single = xb.ndim == 1
    xb = np.atleast_2d(xb)
    K = xb.shape[0]
    ub = np.asarray(ubar_half, float).reshape(K, 2 * N + 1, l) if l else np.zeros((K, 2 * N + 1, 0))
    vb = np.asarray(vbar_half, float).reshape(K, 2 * N + 1, m) if m else np.zeros((K, 2 * N + 1, 0))
    if xb.shape[1] != n:
        raise InputError("inconsistent direction batch shapes")
    Fx, Fu, Fv = stage_coefficients(problem, traj)
    fn = problem.kernel(("linrk4", N), lambda: _linrk4_kernel(grid.h))
    out = np.asarray(fn(Fx, Fu, Fv, xb, ub, vb))
    return out[0] if single else out


def _state_kernel(problem, N, T):
    n, l = problem.n, problem.l
    h = T / N

    def f(x, u, v):
        return ham_first(problem, x, u, v, jnp.zeros(n))[0]

    def run(x0, uh, vh):
        def step(x, k):
            u0, u1, u2 = uh[2 * k], uh[2 * k + 1], uh[2 * k + 2]
            v0, v1, v2 = vh[2 * k], vh[2 * k + 1], vh[2 * k + 2]
            k1 = f(x, u0, v0)
            k2 = f(x + 0.5 * h * k1, u1, v1)
            k3 = f(x + 0.5 * h * k2, u1, v1)
            k4 = f(x + h * k3, u2, v2)
            xn = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            return xn, xn

        _, xs = jax.lax.scan(step, x0, jnp.arange(N))
        return jnp.concatenate([x0[None], xs])

    return jax.jit(jax.vmap(run))


def integrate_state(problem: ProblemDef, grid: Grid, x0, u_half, v_half):
    """RK4 for ``xdot = F(x, u, v)`` with prescribed half-grid controls.

    Accepts a leading batch axis on all three inputs.
    """
    n, l, m, N = problem.n, problem.l, problem.m, grid.N
    x0 = np.asarray(x0, float)
    single = x0.ndim == 1
    x0 = np.atleast_2d(x0)
    K = x0.shape[0]
    uh = np.asarray(u_half, float).reshape(K, 2 * N + 1, l)
    vh = np.asarray(v_half, float).reshape(K, 2 * N + 1, m)
    fn = problem.kernel(("state", N), lambda: _state_kernel(problem, N, grid.T))
    out = np.asarray(fn(x0, uh, vh))
    return out[0] if single else out
