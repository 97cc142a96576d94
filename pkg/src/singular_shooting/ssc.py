"""Pointwise second-order conditions and the uniform-positivity estimate.

The positivity constant is estimated by discretizing the transformed form
``Omega_P2`` on a nodal grid: ``ubar`` and ``ybar`` are piecewise linear,
``xibar`` follows the trapezoid discretization of its linear equation, and
``rho_hat`` is the smallest generalized eigenvalue of the form against the
``gamma`` Gram matrix restricted to the discrete cone.  This is a numerical
estimate of the infimum, not a proof of the inequality.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import jax
import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator

from . import _validation as val
from .exceptions import InputError, NumericalError, PreconditionError
from .goh import V_TOL, GohMatrices, goh_matrices
from .hamiltonian import elim_jac
from .integrator import Grid, Trajectory
from .problem import ProblemDef, eta_data

__all__ = [
    "PointwiseReport",
    "PositivityReport",
    "pointwise_conditions",
    "uniform_positivity",
    "positivity_form",
    "rho_from_form",
    "SSCVerifier",
    "TOL_PSD",
    "TOL_ZERO",
]

TOL_PSD = 1e-8
TOL_ZERO = 1e-6
CERT_RTOL = 1e-8
ESTIMATE_LABEL = "nodal discretization estimate (not a proof)"


def _min_eig(a):
    """Smallest eigenvalue of the symmetric part, per node; ``+inf`` for empty blocks."""
    if a.shape[-1] == 0:
        return np.full(a.shape[0], np.inf)
    return np.linalg.eigvalsh(0.5 * (a + np.swapaxes(a, -1, -2)))[:, 0]


def _inf_norm(a):
    if a.size == 0:
        return np.zeros(a.shape[0])
    return np.max(np.abs(a.reshape(a.shape[0], -1)), axis=1)


def _agg(a):
    a = np.asarray(a, float)
    return None if not np.isfinite(a).any() else float(np.min(a))


@dataclass
class PointwiseReport:
    """Per-node matrices' spectra and norms, their aggregates and pass flags."""

    t: np.ndarray
    min_eig_Huu: np.ndarray
    min_eig_glc: np.ndarray  # of -d/dv of d2H_v/dt2
    Huv_norm: np.ndarray
    V_norm: np.ndarray
    min_eig_block: np.ndarray  # of [[H_uu, E^T], [E, R]]
    tol_psd: float
    tol_zero: float
    zero_scale: float
    margins: dict = field(default_factory=dict)
    passes: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.passes.values())

    def to_dict(self) -> dict:
        return dict(
            margins=self.margins,
            passes=self.passes,
            passed=self.passed,
            tol_psd=self.tol_psd,
            tol_zero=self.tol_zero * self.zero_scale,
        )


def _jac_kernel(problem):
    n, l = problem.n, problem.l

    def one(x, u, v, p):
        return elim_jac(problem, x, p, jax.numpy.concatenate([u, v]))

    return jax.jit(jax.vmap(one))


def pointwise_conditions(problem: ProblemDef, traj: Trajectory, tol_psd: float = TOL_PSD,
                         tol_zero: float = TOL_ZERO, G: Optional[GohMatrices] = None) -> PointwiseReport:
    """Check the Legendre-type conditions node by node.

    ``tol_zero`` is relative to the largest entry of the second-derivative
    blocks of ``H`` along ``traj`` (at least 1).
    """
    tol_psd = float(tol_psd)
    tol_zero = val.check_positive(tol_zero, "tol_zero")
    l, m = problem.l, problem.m
    G = goh_matrices(problem, traj) if G is None else G
    J = np.asarray(problem.kernel("elimjac_nodes", lambda: _jac_kernel(problem))(traj.x, traj.u, traj.v, traj.p))
    glc = J[:, l:, l:]
    block = np.concatenate([
        np.concatenate([G.H_uu, np.swapaxes(G.E, 1, 2)], axis=2),
        np.concatenate([G.E, G.R], axis=2),
    ], axis=1)
    scale = max(1.0, *(float(np.max(np.abs(a), initial=0.0)) for a in (G.H_xx, G.H_ux, G.H_uu, G.H_vx, G.H_uv)))
    rep = PointwiseReport(
        t=traj.t,
        min_eig_Huu=_min_eig(G.H_uu),
        min_eig_glc=_min_eig(glc),
        Huv_norm=_inf_norm(G.H_uv),
        V_norm=_inf_norm(G.V),
        min_eig_block=_min_eig(block),
        tol_psd=tol_psd,
        tol_zero=tol_zero,
        zero_scale=scale,
    )
    rep.margins = dict(
        H_uu=_agg(rep.min_eig_Huu),
        glc=_agg(rep.min_eig_glc),
        block=_agg(rep.min_eig_block),
        Huv_norm=float(np.max(rep.Huv_norm, initial=0.0)),
        V_norm=float(np.max(rep.V_norm, initial=0.0)),
    )
    zt = tol_zero * scale
    rep.passes = dict(
        H_uu=bool(np.all(rep.min_eig_Huu >= tol_psd)),
        glc=bool(np.all(rep.min_eig_glc >= tol_psd)),
        Huv_zero=bool(np.all(rep.Huv_norm <= zt)),
        V_zero=bool(np.all(rep.V_norm <= zt)),
        block=bool(np.all(rep.min_eig_block >= tol_psd)),
    )
    return rep


# ---------------------------------------------------------------------------
# discretized form on the transformed cone


def _resample(a, t_src, t_dst):
    """Linear interpolation along axis 0."""
    if len(t_src) == len(t_dst) and np.allclose(t_src, t_dst):
        return a
    idx = np.clip(np.searchsorted(t_src, t_dst, side="right") - 1, 0, len(t_src) - 2)
    w = ((t_dst - t_src[idx]) / (t_src[idx + 1] - t_src[idx])).reshape((-1,) + (1,) * (a.ndim - 1))
    return (1 - w) * a[idx] + w * a[idx + 1]


def positivity_form(problem: ProblemDef, traj: Trajectory, N_qp: int, G: Optional[GohMatrices] = None):
    """Matrices ``(Q, Gram, A)`` with ``z^T Q z = Omega_P2``, ``z^T Gram z = gamma``.

    ``z = (xi0, u_0..u_N, y_0..y_N, h)``; ``A z = 0`` are the transformed
    endpoint equalities.
    """
    N_qp = val.check_grid_size(N_qp)
    n, l, m = problem.n, problem.l, problem.m
    G = goh_matrices(problem, traj) if G is None else G
    grid = Grid(N_qp, problem.T)
    t = grid.nodes
    rs = {k: _resample(getattr(G, k), traj.t, t) for k in ("F_x", "F_u", "B", "H_xx", "H_ux", "M", "H_uu", "E", "R")}
    N1 = N_qp + 1
    nz = n + N1 * (l + m) + m
    iu = n + np.arange(N1 * l).reshape(N1, l)
    iy = n + N1 * l + np.arange(N1 * m).reshape(N1, m)
    ih = n + N1 * (l + m) + np.arange(m)

    def sel(idx):
        S = np.zeros((len(idx), nz))
        S[np.arange(len(idx)), idx] = 1.0
        return S

    # xi_k = Phi_k z by the trapezoid recursion
    h = grid.h
    C = [np.hstack([rs["F_u"][k], rs["B"][k]]) @ np.vstack([sel(iu[k]), sel(iy[k])]) for k in range(N1)]
    Phi = np.zeros((N1, n, nz))
    Phi[0] = sel(np.arange(n))
    eye = np.eye(n)
    for k in range(N_qp):
        lhs = eye - 0.5 * h * rs["F_x"][k + 1]
        rhs = (eye + 0.5 * h * rs["F_x"][k]) @ Phi[k] + 0.5 * h * (C[k] + C[k + 1])
        Phi[k + 1] = np.linalg.solve(lhs, rhs)

    W = np.zeros((nz, nz))
    Gram = np.zeros((nz, nz))
    for k, wk in enumerate(grid.weights):
        L = np.vstack([Phi[k], sel(iu[k]), sel(iy[k])])
        K = np.block([
            [rs["H_xx"][k], rs["H_ux"][k].T, rs["M"][k].T],
            [rs["H_ux"][k], rs["H_uu"][k], rs["E"][k].T],
            [rs["M"][k], rs["E"][k], rs["R"][k]],
        ])
        W += wk * L.T @ K @ L
        Gram[iu[k], iu[k]] += wk
        Gram[iy[k], iy[k]] += wk
    Gram[np.arange(n), np.arange(n)] += 1.0
    Gram[ih, ih] += 1.0

    # endpoint form g on a = (xi0, xiT + F_vT h)
    Ph = sel(ih)
    A_end = np.vstack([Phi[0], Phi[-1] + G.Fv_T @ Ph])
    X = Ph.T @ G.Hvx_T @ Phi[-1]
    W += A_end.T @ G.ell_hess @ A_end + X + X.T + Ph.T @ G.S_T @ Ph
    Q = 0.25 * (W + W.T)  # symmetric, z^T Q z = z^T W z / 2

    _, deta = eta_data(problem, traj.x[0], traj.x[-1])
    A = np.asarray(deta) @ A_end
    return Q, Gram, A


def rho_from_form(Q, Gram, A, basis=None):
    """Smallest generalized eigenvalue of ``(Z^T Q Z, Z^T Gram Z)``, ``Z`` spanning ``null(A)``.

    Raises
    ------
    NumericalError
        if the Gram matrix is not positive definite on ``null(A)``.
    """
    Z = scipy.linalg.null_space(A) if basis is None else basis
    if Z.shape[1] == 0:
        raise NumericalError("the discrete cone is {0}")
    Qz = Z.T @ Q @ Z
    Gz = Z.T @ Gram @ Z
    try:
        ev = scipy.linalg.eigh(0.5 * (Qz + Qz.T), 0.5 * (Gz + Gz.T), eigvals_only=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"Gram projection is not positive definite: {exc}") from None
    return float(ev[0])


@dataclass
class PositivityReport:
    rho_hat: float
    N_qp: int
    rho_hat_refined: float
    delta: float
    constraint_rank: int
    expected_rank: int
    tol: float  # certification tolerance 1e-8 ||Q||_2
    label: str = ESTIMATE_LABEL

    @property
    def passed(self) -> bool:
        """``rho_hat`` is positive beyond the certification tolerance."""
        return bool(self.rho_hat > self.tol)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def uniform_positivity(problem: ProblemDef, traj: Trajectory, N_qp: int = 100,
                       G: Optional[GohMatrices] = None) -> PositivityReport:
    """Estimate ``rho`` in ``Omega_P2 >= rho gamma`` at ``N_qp`` and ``2 N_qp``.

    Raises
    ------
    PreconditionError
        when ``V`` does not vanish along ``traj`` (``m >= 2``).
    NumericalError
        on a degenerate Gram projection.
    """
    G = goh_matrices(problem, traj) if G is None else G
    vn = np.max(np.abs(G.V), initial=0.0)
    scale = max(1.0, float(np.max(np.abs(G.HvxFv), initial=0.0)))
    if vn > V_TOL * scale:
        k = int(np.argmax(np.max(np.abs(G.V), axis=(1, 2))))
        raise PreconditionError(f"V does not vanish (|V| = {vn:.3g} at node {k}); Omega_P2 is undefined")
    out = []
    rank, tol = 0, 0.0
    for N in (N_qp, 2 * N_qp):
        Q, Gram, A = positivity_form(problem, traj, N, G)
        if N == N_qp:
            rank = int(np.linalg.matrix_rank(A)) if A.size else 0
            tol = CERT_RTOL * float(np.linalg.norm(Q, 2))
        out.append(rho_from_form(Q, Gram, A))
    return PositivityReport(
        rho_hat=out[0],
        N_qp=int(N_qp),
        rho_hat_refined=out[1],
        delta=abs(out[1] - out[0]),
        constraint_rank=rank,
        expected_rank=problem.dims.d_eta,
        tol=tol,
    )


# ---------------------------------------------------------------------------
# estimator facade


class SSCVerifier(BaseEstimator):
    """Solve for the extremal, then check the second-order conditions.

    Parameters
    ----------
    grid : int
        Integration grid size.
    qp_grid : int
        Grid of the positivity estimate (also run at twice this size).
    """

    def __init__(self, grid=2000, qp_grid=100, tol_psd=TOL_PSD, tol_zero=TOL_ZERO, tol=1e-10, max_iter=20):
        self.grid = grid
        self.qp_grid = qp_grid
        self.tol_psd = tol_psd
        self.tol_zero = tol_zero
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, problem, nu0=None):
        from .shooting import ShootingSolver

        solver = ShootingSolver(grid=self.grid, tol=self.tol, max_iter=self.max_iter).fit(problem, nu0)
        self.solver_ = solver
        self.trajectory_ = solver.report_.final_trajectory
        prob = self.trajectory_.problem
        G = goh_matrices(prob, self.trajectory_)
        self.pointwise_ = pointwise_conditions(prob, self.trajectory_, self.tol_psd, self.tol_zero, G)
        self.positivity_ = uniform_positivity(prob, self.trajectory_, self.qp_grid, G)
        return self

    def _check_fitted(self):
        if not hasattr(self, "positivity_"):
            raise InputError("SSCVerifier is not fitted")

    @property
    def passed_(self) -> bool:
        self._check_fitted()
        return self.pointwise_.passed and self.positivity_.passed

    def score(self, problem=None, nu0=None):
        """The positivity estimate ``rho_hat``."""
        if problem is not None:
            self.fit(problem, nu0)
        self._check_fitted()
        return self.positivity_.rho_hat
