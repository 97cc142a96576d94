"""Small input-validation helpers (sklearn ``check_*`` flavour)."""

from __future__ import annotations

import numbers

import numpy as np

from .exceptions import InputError


def check_count(value, name, minimum=0):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise InputError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise InputError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_positive(value, name):
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise InputError(f"{name} must be a real number, got {value!r}") from None
    if not np.isfinite(value) or value <= 0:
        raise InputError(f"{name} must be finite and > 0, got {value}")
    return value


def check_vector(arr, size, name, finite=True):
    """Return ``arr`` as a 1-D float array of the given size."""
    a = np.asarray(arr, dtype=float)
    if a.ndim == 0 and size == 1:
        a = a.reshape(1)
    if a.ndim != 1 or a.shape[0] != size:
        raise InputError(f"{name} must have shape ({size},), got {np.shape(arr)}")
    if finite and not np.all(np.isfinite(a)):
        raise InputError(f"{name} contains non-finite entries")
    return a


def check_array(arr, shape, name, finite=True):
    a = np.asarray(arr, dtype=float)
    if a.shape != tuple(shape):
        raise InputError(f"{name} must have shape {tuple(shape)}, got {a.shape}")
    if finite and not np.all(np.isfinite(a)):
        raise InputError(f"{name} contains non-finite entries")
    return a


def check_xu(problem, x, u):
    return check_vector(x, problem.n, "x"), check_vector(u, problem.l, "u")


def check_xuv(problem, x, u, v):
    x, u = check_xu(problem, x, u)
    return x, u, check_vector(v, problem.m, "v")


def check_xuvp(problem, x, u, v, p):
    x, u, v = check_xuv(problem, x, u, v)
    return x, u, v, check_vector(p, problem.n, "p")


def check_grid_size(N, minimum=2):
    return check_count(N, "N", minimum)


def check_tol(tol, name="tol"):
    return check_positive(tol, name)
