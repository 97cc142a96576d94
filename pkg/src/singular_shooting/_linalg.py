"""Tiny dense linear algebra in closed form.

The elimination systems are ``(l+m) x (l+m)`` with ``l+m`` typically 1 or
2; inside compiled loops, LAPACK custom calls dominate the cost for such
sizes.  Larger systems use the LAPACK-backed routines.
"""

import jax.numpy as jnp


def solve_small(A, b):
    """Solve ``A x = b``; closed form for sizes 1 and 2 (Cramer's rule)."""
    k = A.shape[0]
    if k == 0:
        return b
    if k == 1:
        return b / A[0, 0]
    if k == 2:
        a, bb, c, d = A[0, 0], A[0, 1], A[1, 0], A[1, 1]
        det = a * d - bb * c
        r0, r1 = b[0], b[1]
        return jnp.stack([(d * r0 - bb * r1) / det, (a * r1 - c * r0) / det])
    return jnp.linalg.solve(A, b)


def cond_small(A):
    """2-norm condition number (``inf`` for singular matrices)."""
    k = A.shape[0]
    if k == 1:
        a = jnp.abs(A[0, 0])
        return jnp.where(a > 0, 1.0, jnp.inf)
    if k == 2:
        a, b, c, d = A[0, 0], A[0, 1], A[1, 0], A[1, 1]
        s1 = a * a + b * b + c * c + d * d
        s2 = jnp.sqrt((a * a + b * b - c * c - d * d) ** 2 + 4.0 * (a * c + b * d) ** 2)
        smax2 = 0.5 * (s1 + s2)
        det = jnp.abs(a * d - b * c)
        # smax^2 / |det| = smax / smin
        return jnp.where(det > 0, smax2 / jnp.where(det > 0, det, 1.0), jnp.inf)
    sv = jnp.linalg.svd(A, compute_uv=False)
    return jnp.where(sv[-1] > 0, sv[0] / jnp.where(sv[-1] > 0, sv[-1], 1.0), jnp.inf)
