"""Matrix functions on symmetric positive definite matrices.

Everything goes through a symmetric eigendecomposition. Inputs are
symmetrized on entry and outputs on exit, so small asymmetries from
round-off never accumulate.
"""

import threading
from collections import Counter
from typing import NamedTuple

import numpy as np

from .errors import DimensionError, NumericalError

EIG_FLOOR = 1e-12


class EigenPair(NamedTuple):
    """Spectral decomposition with eigenvalues in descending order."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def apply(self, fn):
        """Return ``V diag(fn(lambda)) V^T``."""
        vecs = self.eigenvectors
        out = (vecs * fn(self.eigenvalues)) @ vecs.T
        return sym(out)


class _Health:
    """Thread-safe counters for numerical events (eigenvalue clamps)."""

    def __init__(self):
        self._lock = threading.Lock()
        self._counts = Counter()

    def record(self, event, n=1):
        with self._lock:
            self._counts[event] += n

    def snapshot(self):
        with self._lock:
            return dict(self._counts)

    def reset(self):
        with self._lock:
            self._counts.clear()


health = _Health()


def sym(m):
    """Symmetric part ``(M + M^T) / 2``."""
    m = np.asarray(m, dtype=float)
    return 0.5 * (m + m.T)


def _check_square(m, role):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"{role}: expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericalError(f"{role}: matrix has non-finite entries")
    return m


def sym_eig(m, role="matrix"):
    """Full eigendecomposition of a symmetric matrix.

    Parameters
    ----------
    m : ndarray, shape (n, n)
        Symmetric matrix; it is symmetrized before factorization.
    role : str
        Name used in error messages (e.g. ``"projected S-scatter"``).

    Returns
    -------
    EigenPair
        Eigenvalues sorted in descending order and matching eigenvectors.
    """
    m = sym(_check_square(m, role))
    try:
        lam, vecs = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"{role}: eigensolver failed to converge ({exc})") from exc
    return EigenPair(lam[::-1].copy(), vecs[:, ::-1].copy())


def floored(eig, role="matrix", record=True):
    """Return eigenvalues clamped from below at ``EIG_FLOOR * lambda_max``.

    Raises NumericalError when the matrix has no positive eigenvalue.
    """
    lam = eig.eigenvalues
    top = lam[0]
    if not top > 0:
        raise NumericalError(f"{role}: not positive definite (largest eigenvalue {top:.3g})")
    floor = EIG_FLOOR * top
    low = lam < floor
    if record and low.any():
        health.record("eigenvalue_clamp", int(low.sum()))
    return np.maximum(lam, floor)


def as_spd(m, role="matrix"):
    """Symmetrize ``m`` and clamp its spectrum so it is positive definite."""
    eig = sym_eig(m, role)
    return EigenPair(floored(eig, role), eig.eigenvectors).apply(lambda x: x)


def _eig_of(m, role):
    return m if isinstance(m, EigenPair) else sym_eig(m, role)


def spd_power(m, p, role="matrix"):
    """Real power ``m**p`` of an SPD matrix.

    ``m`` may be an ndarray or a precomputed :class:`EigenPair`, so
    call sites needing several functions of one matrix factor it once.
    """
    eig = _eig_of(m, role)
    lam = floored(eig, role, record=p < 0)
    return EigenPair(lam, eig.eigenvectors).apply(lambda x: x**p)


def spd_logm(m, role="matrix"):
    """Matrix logarithm of an SPD matrix (a symmetric matrix)."""
    eig = _eig_of(m, role)
    return EigenPair(floored(eig, role), eig.eigenvectors).apply(np.log)


def spd_expm(m):
    """Matrix exponential of a symmetric matrix."""
    return sym_eig(m).apply(np.exp)


def _same_dims(x, y):
    if np.shape(x) != np.shape(y):
        raise DimensionError(f"dimension mismatch: {np.shape(x)} vs {np.shape(y)}")


def weighted_geometric_mean(x, y, t):
    r"""Point at parameter ``t`` on the affine-invariant geodesic from x to y.

    .. math::
        x^{1/2} (x^{-1/2} y x^{-1/2})^t x^{1/2}

    ``t = 0`` returns ``x`` and ``t = 1`` returns ``y``.
    """
    x = _check_square(x, "geometric mean x")
    y = _check_square(y, "geometric mean y")
    _same_dims(x, y)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    if t == 0:
        return as_spd(x, "geometric mean x")
    if t == 1:
        return as_spd(y, "geometric mean y")
    ex = sym_eig(x, "geometric mean x")
    xh = spd_power(ex, 0.5)
    xih = spd_power(ex, -0.5)
    mid = spd_power(xih @ y @ xih, t, "geometric mean inner product")
    return sym(xh @ mid @ xh)


def riemannian_distance_sq(x, y):
    """Squared affine-invariant distance ``||logm(x^{-1/2} y x^{-1/2})||_F^2``."""
    x = _check_square(x, "distance x")
    y = _check_square(y, "distance y")
    _same_dims(x, y)
    xih = spd_power(x, -0.5, "distance x")
    # only the spectrum of the congruence is needed
    lam = floored(sym_eig(xih @ y @ xih, "distance inner product"), "distance inner product")
    return float(np.sum(np.log(lam) ** 2))
