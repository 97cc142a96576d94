"""Shooting function and its Gauss-Newton solution.

The unknown is ``nu = (x0, p0, beta)``.  The residual stacks, in order,

* ``eta(x0, xT)``
* ``p0 + D_{x0} l``
* ``pT - D_{xT} l``
* ``H_v`` at ``T``
* ``dH_v/dt`` at ``0``

with ``l = phi0 + sum beta_j eta_j``.  It has ``2m`` more rows than
unknowns, hence Gauss-Newton.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import jax
import jax.numpy as jnp
import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator

from . import _validation as val
from .elimination import DEFAULT_MAX_ITER, DEFAULT_TOL, make_eliminator
from .exceptions import (
    DivergenceError,
    InputError,
    RankDeficiencyError,
    ShootingBaseError,
    SolverError,
)
from .hamiltonian import dot_hv_k
from .integrator import Grid, Trajectory, build_trajectory, check_flow, extremal_flow
from .problem import ProblemDef, eta_data, field_data

__all__ = [
    "ShootingVector",
    "SolveReport",
    "LinearizedSolutions",
    "shooting_residual",
    "shooting_jacobian",
    "gauss_newton",
    "observed_order",
    "ShootingSolver",
    "RANK_RTOL",
    "DIVERGENCE_STREAK",
]

RANK_RTOL = 1e-10
DIVERGENCE_STREAK = 5
FD_STEP = 1e-6


@dataclass
class ShootingVector:
    x0: np.ndarray
    p0: np.ndarray
    beta: np.ndarray

    def to_array(self, problem: Optional[ProblemDef] = None) -> np.ndarray:
        a = np.concatenate([np.ravel(self.x0), np.ravel(self.p0), np.ravel(self.beta)]).astype(float)
        if problem is not None and a.size != problem.dims.n_unknowns:
            raise InputError(
                f"shooting vector has {a.size} entries, problem needs {problem.dims.n_unknowns}"
            )
        return a

    @classmethod
    def from_array(cls, problem: ProblemDef, a) -> "ShootingVector":
        n = problem.n
        a = val.check_vector(a, problem.dims.n_unknowns, "nu")
        return cls(a[:n].copy(), a[n:2 * n].copy(), a[2 * n:].copy())

    def __len__(self):
        return int(np.size(self.x0) + np.size(self.p0) + np.size(self.beta))


def as_array(problem, nu):
    if isinstance(nu, ShootingVector):
        return nu.to_array(problem)
    return val.check_vector(nu, problem.dims.n_unknowns, "nu")


@dataclass
class LinearizedSolutions:
    """Solutions of the linearized system for the unit seeds of ``nu``.

    Arrays carry a trailing seed axis of length ``2n + d_eta``.
    """

    xbar: np.ndarray  # (N+1, n, k)
    pbar: np.ndarray  # (N+1, n, k)
    ubar: np.ndarray  # (N+1, l, k)
    vbar: np.ndarray  # (N+1, m, k)
    beta_bar: np.ndarray  # (d_eta, k)
    residual: np.ndarray  # (rows, k): linearized shooting residual


@dataclass
class SolveReport:
    nu_hat: ShootingVector
    iterates: list
    converged: bool
    observed_order: float
    final_trajectory: Optional[Trajectory] = field(default=None, repr=False)
    message: str = ""

    @property
    def n_iter(self) -> int:
        return len(self.iterates) - 1

    @property
    def residual_norm(self) -> float:
        return self.iterates[-1][1]


# ---------------------------------------------------------------------------
# traced assembly


def assemble_residual(problem, nu, ys, zs):
    n, l = problem.n, problem.l
    x0, p0 = ys[0, :n], ys[0, n:]
    xT, pT = ys[-1, :n], ys[-1, n:]
    u0, v0 = zs[0, :l], zs[0, l:]
    uT = zs[-1, :l]
    beta = nu[2 * n:]
    ep = problem.endpoints
    eta, deta = eta_data(problem, x0, xT)
    dl = jnp.reshape(jnp.asarray(ep.phi0.grad(x0, xT), float), (-1,)) + beta @ deta
    f, _, _ = field_data(problem, xT, uT)
    return jnp.concatenate([
        eta,
        p0 + dl[:n],
        pT - dl[n:],
        f[1:] @ pT,
        dot_hv_k(problem, x0, u0, v0, p0),
    ])


def _kernels(problem, N, tol, max_iter):
    n, l, m = problem.n, problem.l, problem.m
    T = problem.T
    elim = make_eliminator(problem, tol, max_iter)

    def full(nu, z0):
        ys, zs, infos, sts = extremal_flow(problem, N, T, elim, nu[:n], nu[n:2 * n], z0)
        return assemble_residual(problem, nu, ys, zs), ys, zs, infos, sts

    def res(nu, z0):
        return full(nu, z0)

    def fd(nu, z0):
        k = nu.shape[0]
        h = FD_STEP * jnp.maximum(1.0, jnp.abs(nu))
        E = jnp.eye(k) * h
        pts = jnp.concatenate([nu + E, nu - E])
        r, _, _, infos, sts = jax.vmap(lambda q: full(q, z0))(pts)
        # actual spacing (nu + h) - (nu - h)
        d = jnp.diag(pts[:k] - pts[k:])
        J = (r[:k] - r[k:]).T / d
        ok = jnp.all(infos[..., 3] == 0) & jnp.all(sts[..., 3] == 0) & jnp.all(jnp.isfinite(r))
        return J, ok

    def var(nu, z0):
        def f(q):
            r, ys, zs, infos, sts = full(q, z0)
            return (r, ys, zs), (r, ys, zs, infos, sts)

        (dr, dys, dzs), primal = jax.jacfwd(f, has_aux=True)(nu)
        return dr, dys, dzs, primal

    return dict(res=jax.jit(res), fd=jax.jit(fd), var=jax.jit(var))


def kernels(problem, N, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    return problem.kernel(("shoot", N, tol, max_iter), lambda: _kernels(problem, N, tol, max_iter))


def _check_grid(problem, grid):
    if not isinstance(grid, Grid):
        grid = Grid(val.check_grid_size(grid), problem.T)
    if abs(grid.T - problem.T) > 1e-12 * problem.T:
        raise InputError(f"grid horizon {grid.T} differs from problem horizon {problem.T}")
    return grid


def _z0(problem):
    return np.zeros(problem.l + problem.m)


# ---------------------------------------------------------------------------
# public API


def shooting_residual(problem: ProblemDef, nu, grid, return_trajectory=False):
    """Evaluate the shooting function at ``nu``.

    Returns an array of length ``d_eta + 2n + 2m`` (and the trajectory when
    ``return_trajectory`` is true).
    """
    grid = _check_grid(problem, grid)
    a = as_array(problem, nu)
    r, ys, zs, infos, sts = kernels(problem, grid.N)["res"](a, _z0(problem))
    check_flow(grid, ys, infos, sts)
    r = np.asarray(r)
    if return_trajectory:
        return r, build_trajectory(problem, grid, ys, zs, infos, a)
    return r


def shooting_jacobian(problem: ProblemDef, nu, grid, mode: str = "variational", return_solutions=False):
    """Jacobian of the shooting function, shape ``(d_eta+2n+2m, 2n+d_eta)``.

    Parameters
    ----------
    mode : {"variational", "fd"}
        ``"variational"`` integrates the linearized state-costate system for
        every unit seed; the linearized controls solve the linearized
        elimination equations at each stage.  ``"fd"`` uses central
        differences with step ``1e-6 max(1, |nu_i|)``.
    return_solutions : bool
        With ``mode="variational"``, also return the node samples of the
        linearized solutions as :class:`LinearizedSolutions`.
    """
    grid = _check_grid(problem, grid)
    a = as_array(problem, nu)
    k = kernels(problem, grid.N)
    if mode == "fd":
        if return_solutions:
            raise InputError("linearized solutions are only available in variational mode")
        J, ok = k["fd"](a, _z0(problem))
        if not bool(ok):
            # surface the failure of the nominal point or a perturbed one
            shooting_residual(problem, a, grid)
            raise SolverError("integration failed at a finite-difference point")
        return np.asarray(J)
    if mode != "variational":
        raise InputError(f"unknown jacobian mode {mode!r}")
    dr, dys, dzs, (_, ys, _, infos, sts) = k["var"](a, _z0(problem))
    check_flow(grid, ys, infos, sts)
    J = np.asarray(dr)
    if not return_solutions:
        return J
    n, l, d = problem.n, problem.l, problem.dims.d_eta
    dys, dzs = np.asarray(dys), np.asarray(dzs)
    sol = LinearizedSolutions(
        xbar=dys[:, :n],
        pbar=dys[:, n:],
        ubar=dzs[:, :l],
        vbar=dzs[:, l:],
        beta_bar=np.eye(2 * n + d)[2 * n:],
        residual=J,
    )
    return J, sol


def observed_order(nus, nu_ref=None):
    """Median of ``log(e_{k+1}) / log(e_k)`` over the last three pairs.

    ``e_k = ||nu^k - nu_ref||_inf``; ``nu_ref`` defaults to the last iterate,
    which is then excluded.  Pairs with ``e_k`` outside ``(0, 1)`` are
    skipped because the log ratio is meaningless there.  Returns ``nan`` when
    no pair is available.
    """
    nus = [np.asarray(q, float) for q in nus]
    if nu_ref is None:
        if len(nus) < 2:
            return float("nan")
        nu_ref, nus = nus[-1], nus[:-1]
    e = [float(np.max(np.abs(q - nu_ref))) for q in nus]
    ratios = []
    for a, b in zip(e[:-1], e[1:]):
        if 0 < a < 1 and 0 < b:
            ratios.append(np.log(b) / np.log(a))
    if not ratios:
        return float("nan")
    return float(np.median(ratios[-3:]))


def _evaluate(problem, nu, grid, mode, need_jac=True):
    """Residual, Jacobian (or None) and trajectory at ``nu``."""
    k = kernels(problem, grid.N)
    if mode == "variational" and need_jac:
        dr, _, _, (r, ys, zs, infos, sts) = k["var"](nu, _z0(problem))
        check_flow(grid, ys, infos, sts)
        J = np.asarray(dr)
    else:
        r, ys, zs, infos, sts = k["res"](nu, _z0(problem))
        check_flow(grid, ys, infos, sts)
        J = shooting_jacobian(problem, nu, grid, mode="fd") if need_jac else None
        if mode not in ("fd", "variational"):
            raise InputError(f"unknown jacobian mode {mode!r}")
    return np.asarray(r), J, (ys, zs, infos)


def _gn_step(J, r):
    """Least-squares step from the QR factorization of ``J``."""
    sv = np.linalg.svd(J, compute_uv=False)
    if sv.size == 0 or sv[-1] < RANK_RTOL * sv[0]:
        return None, sv
    Q, R = np.linalg.qr(J, mode="reduced")
    return scipy.linalg.solve_triangular(R, -(Q.T @ r)), sv


def gauss_newton(
    problem: ProblemDef,
    nu0,
    grid,
    tol: float = 1e-10,
    max_iter: int = 20,
    mode: str = "variational",
    nu_ref=None,
    keep_trajectory: bool = True,
) -> SolveReport:
    """Solve ``S(nu) = 0`` in the least-squares sense by Gauss-Newton.

    No line search is performed.  Stops when ``||S||_inf <= tol`` or after
    ``max_iter`` steps (returns ``converged=False``).

    Raises
    ------
    RankDeficiencyError
        if the smallest singular value of ``S'`` is below ``1e-10`` times
        the largest.
    DivergenceError
        if the residual grows on 5 consecutive iterations.
    SolverError
        wrapping integration failures.  All three carry the partial
        ``report``.
    """
    grid = _check_grid(problem, grid)
    tol = val.check_tol(tol)
    max_iter = val.check_count(max_iter, "max_iter", 0)
    nu = as_array(problem, nu0).copy()
    iterates = []
    streak = 0
    raw = None

    def report(converged, msg=""):
        nus = [q for q, _ in iterates]
        order = observed_order(nus, nu_ref)
        tr = None
        if keep_trajectory and raw is not None:
            tr = build_trajectory(problem, grid, *raw, iterates[-1][0])
        return SolveReport(
            ShootingVector.from_array(problem, iterates[-1][0]),
            list(iterates),
            converged,
            order,
            tr,
            msg,
        )

    for it in range(max_iter + 1):
        try:
            r, J, raw = _evaluate(problem, nu, grid, mode, need_jac=it < max_iter)
        except ShootingBaseError as exc:
            iterates.append((nu.copy(), float("nan")))
            raw = None  # the last good trajectory belongs to another iterate
            raise SolverError(f"iteration {it}: {exc}", report(False, str(exc))) from exc
        rn = float(np.max(np.abs(r)))
        if iterates and rn > iterates[-1][1]:
            streak += 1
        else:
            streak = 0
        iterates.append((nu.copy(), rn))
        if rn <= tol:
            return report(True)
        if streak >= DIVERGENCE_STREAK:
            msg = f"residual grew on {streak} consecutive iterations"
            raise DivergenceError(msg, report(False, msg))
        if it == max_iter:
            break
        step, sv = _gn_step(J, r)
        if step is None:
            msg = f"rank-deficient shooting Jacobian (singular values {sv})"
            raise RankDeficiencyError(msg, report(False, msg))
        nu = nu + step
    return report(False, f"no convergence in {max_iter} iterations")


# ---------------------------------------------------------------------------
# estimator facade


class ShootingSolver(BaseEstimator):
    """Estimator-style wrapper around :func:`gauss_newton`.

    ``fit(problem, nu0)`` solves the shooting equation; ``predict(t)``
    interpolates the extremal at times ``t``.

    Parameters
    ----------
    grid : int
        Number of RK4 steps.
    tol : float
        Stopping tolerance on ``||S||_inf``.
    max_iter : int
    jacobian : {"variational", "fd"}
    """

    def __init__(self, grid=2000, tol=1e-10, max_iter=20, jacobian="variational"):
        self.grid = grid
        self.tol = tol
        self.max_iter = max_iter
        self.jacobian = jacobian

    def fit(self, problem, nu0=None):
        if nu0 is None:
            nu0 = getattr(problem, "nu_hat", None)
            if nu0 is None:
                raise InputError("nu0 is required for problems without a reference solution")
        prob = getattr(problem, "problem", problem)
        if self.jacobian not in ("variational", "fd"):
            raise InputError(f"unknown jacobian mode {self.jacobian!r}")
        g = Grid(val.check_grid_size(self.grid), prob.T)
        self.problem_ = prob
        self.report_ = gauss_newton(prob, nu0, g, tol=self.tol, max_iter=self.max_iter, mode=self.jacobian)
        self.nu_ = self.report_.nu_hat
        self.trajectory_ = self.report_.final_trajectory
        self.converged_ = self.report_.converged
        return self

    def _check_fitted(self):
        if not hasattr(self, "trajectory_"):
            raise InputError("ShootingSolver is not fitted yet")

    def predict(self, t):
        """Linearly interpolated ``(x, u, v, p)`` at times ``t``."""
        self._check_fitted()
        tr = self.trajectory_
        t = np.atleast_1d(np.asarray(t, float))
        if np.any(t < 0) or np.any(t > tr.grid.T):
            raise InputError("times outside [0, T]")

        def interp(a):
            return np.column_stack([np.interp(t, tr.t, a[:, j]) for j in range(a.shape[1])]) if a.shape[1] else np.zeros((t.size, 0))

        return dict(x=interp(tr.x), u=interp(tr.u), v=interp(tr.v), p=interp(tr.p))

    def score(self, problem=None, nu0=None):
        """Negative final residual norm (higher is better)."""
        self._check_fitted()
        return -self.report_.residual_norm
