"""Grassmann manifold Grass(r, d) with orthonormal d x r representatives.

A point is an ndarray ``u`` of shape (d, r) with ``u.T @ u = I``; the
abstract point is its column space. Tangent vectors are (d, r) arrays in
the horizontal space ``{xi : u.T @ xi = 0}``.
"""

import numpy as np

from .errors import DimensionError, NumericalError


def qf(m):
    """Q factor of a thin QR decomposition, with R's diagonal made positive."""
    q, r = np.linalg.qr(m)
    diag = np.diag(r)
    if np.any(np.abs(diag) <= np.finfo(float).eps * max(1.0, np.abs(diag).max(initial=0.0)) * m.shape[0]):
        raise NumericalError("matrix is rank deficient; cannot orthonormalize its columns")
    return q * np.sign(diag)


def random_point(d, r, seed):
    """Seeded random point: Gaussian fill followed by positive-diagonal QR."""
    if not 1 <= r <= d:
        raise ValueError(f"need 1 <= r <= d, got r={r}, d={d}")
    rng = np.random.default_rng(seed)
    return qf(rng.standard_normal((d, r)))


def _check_pair(u, z):
    if np.shape(u) != np.shape(z):
        raise DimensionError(f"shape mismatch: point {np.shape(u)} vs vector {np.shape(z)}")


def project_tangent(u, z):
    """Horizontal projection ``(I - u u^T) z`` computed in O(d r^2)."""
    _check_pair(u, z)
    return z - u @ (u.T @ z)


def retract(u, xi, step):
    """QR retraction ``qf(u + step * xi)``; ``step = 0`` returns ``u``."""
    _check_pair(u, xi)
    if step == 0:
        return u
    try:
        return qf(u + step * xi)
    except NumericalError as exc:
        raise NumericalError(f"retraction with step {step:g} is degenerate: {exc}") from exc


def transport(u_new, xi):
    """Projection transport of ``xi`` into the horizontal space at ``u_new``."""
    return project_tangent(u_new, xi)


def tangent_inner(a, b):
    """Canonical metric ``trace(a^T b)``."""
    if np.shape(a) != np.shape(b):
        raise DimensionError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")
    return float(np.vdot(a, b))


def tangent_norm(a):
    return float(np.linalg.norm(a))


def orthonormality_error(u):
    """Frobenius norm of ``u^T u - I``."""
    return float(np.linalg.norm(u.T @ u - np.eye(u.shape[1])))
