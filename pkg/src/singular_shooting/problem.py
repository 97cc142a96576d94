"""Problem data for partially-affine control systems.

A problem is described by a list of vector fields ``f_0, ..., f_m`` mapping
``(x, u)`` to ``R^n`` (``f_0`` is the drift, the others multiply the affine
controls ``v``), an endpoint cost ``phi0(x0, xT)`` and endpoint equality
constraints ``eta_j(x0, xT) = 0``.

All user callables must be written with ``jax.numpy`` so that they can be
traced and compiled.  First derivatives are mandatory.  Second derivatives
are optional; when missing they are obtained by central differences of the
supplied first derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import jax
import jax.numpy as jnp
import numpy as np

from . import _validation as val
from .exceptions import EvaluationError, InputError

__all__ = [
    "ControlDims",
    "VectorField",
    "EndpointFunction",
    "EndpointSpec",
    "ProblemDef",
    "DerivativeCheck",
    "ValidationReport",
    "dynamics_eval",
    "validate_problem",
    "JAC_RTOL",
    "HESS_RTOL",
]

JAC_RTOL = 1e-5
HESS_RTOL = 1e-4
_FD_HESS_STEP = float(np.cbrt(np.finfo(float).eps))


@dataclass(frozen=True)
class ControlDims:
    """Dimensions ``(n, l, m, d_eta)`` of a problem."""

    n: int
    l: int
    m: int
    d_eta: int = 0

    def __post_init__(self):
        for name in ("n", "l", "m", "d_eta"):
            val.check_count(getattr(self, name), name)
        if self.n < 1:
            raise InputError("state dimension n must be >= 1")
        if self.l + self.m < 1:
            raise InputError("need at least one control (l + m >= 1)")
        if self.d_eta > 2 * self.n:
            raise InputError(
                f"d_eta={self.d_eta} exceeds the endpoint dimension 2n={2 * self.n}"
            )

    @property
    def n_unknowns(self) -> int:
        return 2 * self.n + self.d_eta

    @property
    def n_residuals(self) -> int:
        return self.d_eta + 2 * self.n + 2 * self.m


@dataclass(frozen=True, eq=False)
class VectorField:
    """A smooth map ``(x, u) -> R^n`` with derivatives.

    ``hess`` (optional) returns ``(D_xx, D_xu, D_uu)`` with shapes
    ``(n, n, n)``, ``(n, n, l)`` and ``(n, l, l)``; the first index is the
    output component.
    """

    value: Callable
    jac_x: Callable
    jac_u: Callable
    hess: Optional[Callable] = None
    name: str = ""


@dataclass(frozen=True, eq=False)
class EndpointFunction:
    """Scalar function of ``(x0, xT)``.

    ``grad`` returns the concatenated gradient ``(d/dx0, d/dxT)`` of length
    ``2n``; ``hess`` (optional) the ``(2n, 2n)`` Hessian in the same ordering.
    """

    value: Callable
    grad: Callable
    hess: Optional[Callable] = None
    name: str = ""


@dataclass(frozen=True, eq=False)
class EndpointSpec:
    phi0: EndpointFunction
    eta: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "eta", tuple(self.eta))


@dataclass(frozen=True, eq=False)
class ProblemDef:
    """Immutable problem definition.

    Instances hash by identity; compiled kernels are cached per instance.
    """

    dims: ControlDims
    T: float
    fields: tuple
    endpoints: EndpointSpec
    name: str = "problem"
    _kernels: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(self.fields))
        object.__setattr__(self, "T", val.check_positive(self.T, "T"))
        if len(self.fields) != self.dims.m + 1:
            raise InputError(
                f"expected m+1={self.dims.m + 1} vector fields, got {len(self.fields)}"
            )
        if len(self.endpoints.eta) != self.dims.d_eta:
            raise InputError(
                f"expected d_eta={self.dims.d_eta} constraints, "
                f"got {len(self.endpoints.eta)}"
            )

    @property
    def n(self):
        return self.dims.n

    @property
    def l(self):
        return self.dims.l

    @property
    def m(self):
        return self.dims.m

    def kernel(self, key, builder):
        """Return a cached compiled object built by ``builder()``."""
        k = self._kernels.get(key)
        if k is None:
            k = builder()
            self._kernels[key] = k
        return k


# ---------------------------------------------------------------------------
# traced kernels (jnp, shapes fixed by dims)


def _fd_hessians(fld: VectorField, x, u):
    """Central differences of the analytic Jacobians of one field."""
    n, l = x.shape[0], u.shape[0]
    hx = _FD_HESS_STEP * jnp.maximum(1.0, jnp.abs(x))
    hu = _FD_HESS_STEP * jnp.maximum(1.0, jnp.abs(u))

    def dx(c):
        e = jnp.zeros(n).at[c].set(hx[c])
        return (
            (fld.jac_x(x + e, u) - fld.jac_x(x - e, u)) / (2 * hx[c]),
            (fld.jac_u(x + e, u) - fld.jac_u(x - e, u)) / (2 * hx[c]),
        )

    def du(c):
        e = jnp.zeros(l).at[c].set(hu[c])
        return (fld.jac_u(x, u + e) - fld.jac_u(x, u - e)) / (2 * hu[c])

    jxx, jux = jax.vmap(dx)(jnp.arange(n))  # (n_c, n, n), (n_c, n, l)
    dxx = jnp.moveaxis(jxx, 0, 2)
    dxx = 0.5 * (dxx + jnp.swapaxes(dxx, 1, 2))
    dxu = jnp.moveaxis(jux, 0, 1)  # [i, a, b] = d Ju[i,b] / dx_a
    if l:
        duu = jnp.moveaxis(jax.vmap(du)(jnp.arange(l)), 0, 2)
        duu = 0.5 * (duu + jnp.swapaxes(duu, 1, 2))
    else:
        duu = jnp.zeros((n, 0, 0))
    return dxx, dxu, duu


def field_data(problem: ProblemDef, x, u):
    """Stacked values ``(m+1, n)`` and Jacobians ``(m+1, n, n)``, ``(m+1, n, l)``."""
    n, l = problem.n, problem.l
    f = jnp.stack([jnp.reshape(jnp.asarray(fl.value(x, u), float), (n,)) for fl in problem.fields])
    jx = jnp.stack([jnp.reshape(jnp.asarray(fl.jac_x(x, u), float), (n, n)) for fl in problem.fields])
    ju = jnp.stack([jnp.reshape(jnp.asarray(fl.jac_u(x, u), float), (n, l)) for fl in problem.fields])
    return f, jx, ju


def field_hessians(problem: ProblemDef, x, u):
    """Stacked second derivatives ``(m+1, n, n, n)``, ``(m+1, n, n, l)``, ``(m+1, n, l, l)``."""
    n, l = problem.n, problem.l
    out = []
    for fl in problem.fields:
        if fl.hess is not None:
            dxx, dxu, duu = fl.hess(x, u)
            out.append((
                jnp.reshape(jnp.asarray(dxx, float), (n, n, n)),
                jnp.reshape(jnp.asarray(dxu, float), (n, n, l)),
                jnp.reshape(jnp.asarray(duu, float), (n, l, l)),
            ))
        else:
            out.append(_fd_hessians(fl, x, u))
    return tuple(jnp.stack(parts) for parts in zip(*out))


def endpoint_hessian(fn: EndpointFunction, z):
    """Hessian of an endpoint function at ``z = (x0, xT)`` (FD fallback)."""
    n2 = z.shape[0]
    n = n2 // 2
    if fn.hess is not None:
        return jnp.reshape(jnp.asarray(fn.hess(z[:n], z[n:]), float), (n2, n2))
    h = _FD_HESS_STEP * jnp.maximum(1.0, jnp.abs(z))

    def col(c):
        e = jnp.zeros(n2).at[c].set(h[c])
        zp, zm = z + e, z - e
        return (fn.grad(zp[:n], zp[n:]) - fn.grad(zm[:n], zm[n:])) / (2 * h[c])

    hs = jax.vmap(col)(jnp.arange(n2)).T
    return 0.5 * (hs + hs.T)


def lagrangian_data(problem: ProblemDef, beta, x0, xT):
    """``(l, Dl, D2l)`` of ``phi0 + sum beta_j eta_j`` at ``(x0, xT)``."""
    ep = problem.endpoints
    z = jnp.concatenate([x0, xT])
    val_ = ep.phi0.value(x0, xT)
    grd = jnp.reshape(jnp.asarray(ep.phi0.grad(x0, xT), float), (-1,))
    hes = endpoint_hessian(ep.phi0, z)
    for j, fn in enumerate(ep.eta):
        val_ = val_ + beta[j] * fn.value(x0, xT)
        grd = grd + beta[j] * jnp.reshape(jnp.asarray(fn.grad(x0, xT), float), (-1,))
        hes = hes + beta[j] * endpoint_hessian(fn, z)
    return val_, grd, hes


def eta_data(problem: ProblemDef, x0, xT):
    """Constraint values ``(d_eta,)`` and gradients ``(d_eta, 2n)``."""
    eta = problem.endpoints.eta
    if not eta:
        return jnp.zeros(0), jnp.zeros((0, 2 * problem.n))
    vals = jnp.stack([jnp.asarray(fn.value(x0, xT), float).reshape(()) for fn in eta])
    grads = jnp.stack([jnp.reshape(jnp.asarray(fn.grad(x0, xT), float), (-1,)) for fn in eta])
    return vals, grads


def _dyn_kernel(problem):
    def k(x, u, v):
        f, jx, ju = field_data(problem, x, u)
        vv = jnp.concatenate([jnp.ones(1), v])
        return vv @ f, jnp.einsum("k,kij->ij", vv, jx), jnp.einsum("k,kij->ij", vv, ju), f[1:].T

    return jax.jit(k)


def dynamics_eval(problem: ProblemDef, x, u, v):
    """Evaluate ``F(x,u,v) = f_0 + sum v_i f_i`` and its Jacobians.

    Returns
    -------
    xdot : (n,) ndarray
    F_x : (n, n) ndarray
    F_u : (n, l) ndarray
    F_v : (n, m) ndarray, column ``i`` is ``f_{i+1}(x, u)``
    """
    x, u, v = val.check_xuv(problem, x, u, v)
    out = problem.kernel("dyn", lambda: _dyn_kernel(problem))(x, u, v)
    out = tuple(np.asarray(a) for a in out)
    if not all(np.all(np.isfinite(a)) for a in out):
        raise EvaluationError(f"non-finite dynamics at x={x}, u={u}, v={v}")
    return out


# ---------------------------------------------------------------------------
# derivative validation


@dataclass
class DerivativeCheck:
    """Largest relative deviation of one supplied derivative from FD."""

    owner: str
    derivative: str
    max_rel_dev: float
    worst_entry: tuple
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_dev <= self.tol)


@dataclass
class ValidationReport:
    checks: list
    n_points: int

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def summary(self) -> str:
        lines = [f"{'PASS' if self.passed else 'FAIL'} ({self.n_points} points)"]
        for c in self.checks:
            flag = "ok " if c.passed else "BAD"
            lines.append(
                f"  {flag} {c.owner}.{c.derivative}: {c.max_rel_dev:.3e} "
                f"(tol {c.tol:g}, entry {c.worst_entry})"
            )
        return "\n".join(lines)


def _fd_step(z):
    """``max(1e-6, 1e-6 |z|)`` rounded to a power of two, so ``z +- h`` is exact for dyadic ``z``."""
    return np.exp2(np.round(np.log2(np.maximum(1e-6, 1e-6 * np.abs(z)))))


def _central(fn, z):
    """Central-difference Jacobian of ``fn`` at ``z``; result shape ``fn(z).shape + z.shape``."""
    z = np.asarray(z, float)
    h = _fd_step(z)
    cols = []
    for c in range(z.size):
        zp, zm = z.copy(), z.copy()
        zp[c] += h[c]
        zm[c] -= h[c]
        hc = zp[c] - zm[c]  # exact spacing actually used
        cols.append((np.asarray(fn(zp), float) - np.asarray(fn(zm), float)) / hc)
    if not cols:
        return np.zeros(np.shape(fn(z)) + (0,))
    return np.stack(cols, axis=-1)


class _Tracker:
    def __init__(self, owner, derivative, tol):
        self.owner, self.derivative, self.tol = owner, derivative, tol
        self.dev, self.entry = 0.0, ()

    def update(self, supplied, approx, offset=()):
        supplied = np.asarray(supplied, float)
        approx = np.asarray(approx, float)
        if supplied.shape != approx.shape:
            raise InputError(
                f"{self.owner}.{self.derivative}: shape {supplied.shape}, "
                f"expected {approx.shape}"
            )
        if supplied.size == 0:
            return
        err = np.abs(supplied - approx)
        rel = err / max(1.0, float(np.max(np.abs(approx))))
        idx = np.unravel_index(int(np.argmax(rel)), rel.shape)
        if rel[idx] > self.dev or not self.entry:
            self.dev, self.entry = float(rel[idx]), tuple(int(i) for i in idx)

    def result(self):
        return DerivativeCheck(self.owner, self.derivative, self.dev, self.entry, self.tol)


def _finite_or_raise(arr, owner, where):
    arr = np.asarray(arr, float)
    if not np.all(np.isfinite(arr)):
        raise EvaluationError(f"non-finite value from {owner} at {where}")
    return arr


def validate_problem(problem: ProblemDef, sample_points: Sequence) -> ValidationReport:
    """Compare supplied derivatives with central finite differences.

    Parameters
    ----------
    problem : ProblemDef
    sample_points : sequence of ``(x, u)`` pairs
        Endpoint functions are checked at ``(x_k, x_{k+1})`` pairs built from
        consecutive sample states (cyclically).

    Returns
    -------
    ValidationReport
    """
    pts = [val.check_xu(problem, x, u) for x, u in sample_points]
    if not pts:
        raise InputError("validate_problem needs at least one sample point")
    n, l = problem.n, problem.l
    checks = []
    for i, fl in enumerate(problem.fields):
        owner = fl.name or f"f{i}"
        trk = {k: _Tracker(owner, k, JAC_RTOL) for k in ("jac_x", "jac_u")}
        if fl.hess is not None:
            trk.update({k: _Tracker(owner, k, HESS_RTOL) for k in ("D_xx", "D_xu", "D_uu")})
        for x, u in pts:
            where = f"x={x.tolist()}, u={u.tolist()}"
            _finite_or_raise(fl.value(x, u), owner, where)
            jx = _finite_or_raise(fl.jac_x(x, u), owner + ".jac_x", where).reshape(n, n)
            ju = _finite_or_raise(fl.jac_u(x, u), owner + ".jac_u", where).reshape(n, l)
            trk["jac_x"].update(jx, _central(lambda z: fl.value(z, u), x))
            trk["jac_u"].update(ju, _central(lambda z: fl.value(x, z), u).reshape(n, l))
            if fl.hess is not None:
                dxx, dxu, duu = (np.asarray(a, float) for a in fl.hess(x, u))
                trk["D_xx"].update(dxx.reshape(n, n, n), _central(lambda z: fl.jac_x(z, u), x))
                trk["D_xu"].update(
                    dxu.reshape(n, n, l),
                    np.swapaxes(_central(lambda z: np.reshape(fl.jac_u(z, u), (n, l)), x), 1, 2),
                )
                trk["D_uu"].update(
                    duu.reshape(n, l, l),
                    _central(lambda z: np.reshape(fl.jac_u(x, z), (n, l)), u).reshape(n, l, l),
                )
        checks.extend(t.result() for t in trk.values())

    ep = problem.endpoints
    fns = [("phi0", ep.phi0)] + [(f"eta{j}", fn) for j, fn in enumerate(ep.eta)]
    zs = [np.concatenate([pts[k][0], pts[(k + 1) % len(pts)][0]]) for k in range(len(pts))]
    for label, fn in fns:
        owner = fn.name or label
        tg = _Tracker(owner, "grad", JAC_RTOL)
        th = _Tracker(owner, "hess", HESS_RTOL) if fn.hess is not None else None
        for z in zs:
            where = f"(x0, xT)={z.tolist()}"
            _finite_or_raise(fn.value(z[:n], z[n:]), owner, where)
            g = _finite_or_raise(fn.grad(z[:n], z[n:]), owner + ".grad", where).reshape(2 * n)
            tg.update(g, _central(lambda w: fn.value(w[:n], w[n:]), z))
            if th is not None:
                hs = np.asarray(fn.hess(z[:n], z[n:]), float).reshape(2 * n, 2 * n)
                th.update(hs, _central(lambda w: np.reshape(fn.grad(w[:n], w[n:]), (-1,)), z))
        checks.append(tg.result())
        if th is not None:
            checks.append(th.result())
    return ValidationReport(checks, len(pts))
