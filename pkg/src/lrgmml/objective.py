"""The low-rank GMML objective on Grass(r, d).

Scatter matrices are never formed explicitly: a :class:`PairScatter`
stores the pair differences as rows, and ``U^T S U`` is computed as
``(diffs U)^T (diffs U)`` in O(n d r + n r^2).
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .errors import DimensionError, NumericalError
from .grassmann import orthonormality_error, random_point
from .solver import Problem
from .spd import as_spd, floored, riemannian_distance_sq, spd_logm, spd_power, sym, sym_eig

# The derivative expression in egrad() omits this factor: the true
# differential of cost() along a tangent direction xi is
# GRADIENT_SCALE * <egrad(u), xi>. Confirmed by tests/test_gradcheck.py.
GRADIENT_SCALE = 4.0

FULL_RANK_GUARD = 4096
DENSE_INIT_MAX_D = 256
DEGENERATE_FRACTION = 1e-8


@dataclass(frozen=True)
class PairScatter:
    """Scatter ``sum_k delta_k delta_k^T`` stored as the rows ``delta_k``."""

    diffs: np.ndarray

    @property
    def n_pairs(self):
        return self.diffs.shape[0]

    @property
    def d(self):
        return self.diffs.shape[1]

    def total(self):
        """Trace of the full scatter."""
        return float(np.einsum("ij,ij->", self.diffs, self.diffs))

    def times(self, u):
        """``S @ u`` without forming S."""
        return self.diffs.T @ (self.diffs @ u)

    def explicit(self):
        """The d x d scatter; only for baselines and test oracles."""
        return sym(self.diffs.T @ self.diffs)


def build_scatter(points, pairs):
    """Stack ``points[i] - points[j]`` for every index pair ``(i, j)``."""
    points = np.asarray(points, dtype=float)
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    if len(pairs) == 0:
        raise ValueError("at least one pair is required to build a scatter")
    n = points.shape[0]
    if pairs.min() < 0 or pairs.max() >= n:
        raise IndexError(f"pair index out of range for {n} points")
    return PairScatter(points[pairs[:, 0]] - points[pairs[:, 1]])


def _projected(sc, u, role):
    if sc.d != u.shape[0]:
        raise DimensionError(f"{role}: scatter has d={sc.d}, subspace has d={u.shape[0]}")
    proj = sc.diffs @ u
    m = sym(proj.T @ proj)
    total = sc.total()
    if not np.trace(m) > DEGENERATE_FRACTION * total:
        raise NumericalError(
            f"{role}: projected scatter is numerically zero "
            f"(trace {np.trace(m):.3g} of {total:.3g}); use more pairs or a smaller rank"
        )
    return proj, as_spd(m, role)


def project_scatter(sc, u, role="projected scatter"):
    """``u^T S u`` as an r x r SPD matrix."""
    return _projected(sc, u, role)[1]


def inner_solution(s_tilde, d_tilde, t):
    """Closed-form optimal B for fixed subspace.

    ``S^{-1/2} (S^{1/2} D S^{1/2})^t S^{-1/2}``, i.e. the weighted
    geometric mean of ``S^{-1}`` and ``D`` at parameter t.
    """
    if np.shape(s_tilde) != np.shape(d_tilde):
        raise DimensionError(f"dimension mismatch: {np.shape(s_tilde)} vs {np.shape(d_tilde)}")
    es = sym_eig(s_tilde, "projected S-scatter")
    sh = spd_power(es, 0.5)
    sih = spd_power(es, -0.5)
    return sym(sih @ spd_power(sh @ d_tilde @ sh, t, "S^1/2 D S^1/2") @ sih)


def weighted_cost(b, s_tilde, d_tilde, t):
    """``(1-t) dist^2(B, S^{-1}) + t dist^2(B, D)`` on the r x r matrices."""
    s_inv = spd_power(s_tilde, -1.0, "projected S-scatter")
    return (1.0 - t) * riemannian_distance_sq(b, s_inv) + t * riemannian_distance_sq(b, d_tilde)


def _check_t(t):
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")


class _Evaluation:
    """Every quantity cost and gradient share at one subspace."""

    def __init__(self, u, sc_s, sc_d, t):
        _check_t(t)
        self.u, self.t = u, t
        self.proj_s, self.s_tilde = _projected(sc_s, u, "projected S-scatter")
        self.proj_d, self.d_tilde = _projected(sc_d, u, "projected D-scatter")
        self.b = inner_solution(self.s_tilde, self.d_tilde, t)
        self.sc_s, self.sc_d = sc_s, sc_d

    def cost(self):
        return weighted_cost(self.b, self.s_tilde, self.d_tilde, self.t)

    def egrad(self):
        t, b = self.t, self.b
        es = sym_eig(self.s_tilde, "projected S-scatter")
        sh, sih = spd_power(es, 0.5), spd_power(es, -0.5)
        ed = sym_eig(self.d_tilde, "projected D-scatter")
        dih = spd_power(ed, -0.5)
        core_s = sih @ spd_logm(sh @ b @ sh, "S^1/2 B S^1/2") @ sih
        core_d = dih @ spd_logm(dih @ b @ dih, "D^-1/2 B D^-1/2") @ dih
        su = self.sc_s.diffs.T @ self.proj_s
        du = self.sc_d.diffs.T @ self.proj_d
        return (1.0 - t) * (su @ core_s) - t * (du @ core_d)


def cost(u, sc_s, sc_d, t):
    """Weighted Riemannian-distance objective with B at its closed form."""
    return _Evaluation(u, sc_s, sc_d, t).cost()


def egrad(u, sc_s, sc_d, t):
    """Partial derivative of :func:`cost` with respect to u, up to GRADIENT_SCALE.

    Returns the d x r matrix

        (1-t) S U S~^{-1/2} logm(S~^{1/2} B S~^{1/2}) S~^{-1/2}
          - t D U D~^{-1/2} logm(D~^{-1/2} B D~^{-1/2}) D~^{-1/2}

    with ``S~ = U^T S U`` and ``D~ = U^T D U``.
    """
    return _Evaluation(u, sc_s, sc_d, t).egrad()


@dataclass
class MetricModel:
    """Rank-r Mahalanobis metric ``A = U B U^T``."""

    u: np.ndarray
    b: np.ndarray
    t: float

    @property
    def d(self):
        return self.u.shape[0]

    @property
    def r(self):
        return self.u.shape[1]

    def metric(self):
        """The explicit d x d matrix A (small d only)."""
        return sym(self.u @ self.b @ self.u.T)

    def validate(self, tol=1e-10):
        if self.u.ndim != 2 or self.b.shape != (self.r, self.r):
            raise DimensionError(f"U has shape {self.u.shape} but B has shape {self.b.shape}")
        err = orthonormality_error(self.u)
        if err > tol:
            raise NumericalError(f"U is not orthonormal (||U^T U - I||_F = {err:.3g})")
        if np.max(np.abs(self.b - self.b.T)) > tol * max(1.0, np.abs(self.b).max()):
            raise NumericalError("B is not symmetric")
        if not np.linalg.eigvalsh(sym(self.b)).min() > 0:
            raise NumericalError("B is not positive definite")
        return self

    def transformer(self):
        """``B^{1/2} U^T`` as an r x d matrix."""
        return spd_power(self.b, 0.5, "model B") @ self.u.T


def trace_cost(model, sc_s, sc_d):
    """``Tr(A S) + Tr(A^+ D)`` with ``A = U B U^T`` and ``A^+ = U B^{-1} U^T``.

    Evaluated in the r-dimensional space as ``Tr(B S~) + Tr(B^{-1} D~)``.
    """
    ps = sc_s.diffs @ model.u
    pd = sc_d.diffs @ model.u
    s_tilde, d_tilde = ps.T @ ps, pd.T @ pd
    return float(np.trace(model.b @ s_tilde) + np.trace(np.linalg.solve(model.b, d_tilde)))


def gmml_closed_form(sc_s, sc_d, t, d):
    """Full-rank GMML metric ``S^{-1/2} (S^{1/2} D S^{1/2})^t S^{-1/2}``.

    Costs O(d^3) and materializes d x d scatters, so it is refused for
    ``d > FULL_RANK_GUARD``.
    """
    _check_t(t)
    if d > FULL_RANK_GUARD:
        raise ValueError(
            f"d={d} exceeds the full-rank guard ({FULL_RANK_GUARD}); use low-rank training instead"
        )
    if sc_s.d != d or sc_d.d != d:
        raise DimensionError(f"scatters have d={sc_s.d}/{sc_d.d}, expected {d}")
    s = as_spd(sc_s.explicit(), "S-scatter")
    dd = as_spd(sc_d.explicit(), "D-scatter")
    return inner_solution(s, dd, t)


def gmml_cost(a, sc_s, sc_d, t):
    """Weighted distance objective of a full d x d metric."""
    s = as_spd(sc_s.explicit(), "S-scatter")
    dd = as_spd(sc_d.explicit(), "D-scatter")
    return weighted_cost(a, s, dd, t)


def initial_point(sc_d, r, seed=0):
    """Top-r eigenvectors of the D-scatter, computed without forming it for large d."""
    d = sc_d.d
    if not 1 <= r <= d:
        raise ValueError(f"need 1 <= r <= d, got r={r}, d={d}")
    if d <= DENSE_INIT_MAX_D or r >= d - 1:
        vecs = sym_eig(sc_d.explicit(), "D-scatter").eigenvectors[:, :r]
    else:
        op = spla.LinearOperator((d, d), matvec=sc_d.times, matmat=sc_d.times, dtype=float)
        v0 = np.random.default_rng(seed).standard_normal(d)
        try:
            lam, vecs = spla.eigsh(op, k=r, which="LA", v0=v0)
        except spla.ArpackNoConvergence:
            return random_point(d, r, seed)
        vecs = vecs[:, np.argsort(lam)[::-1]]
    # orthonormalize and fix column signs for reproducibility
    q, _ = np.linalg.qr(vecs)
    signs = np.sign(q[np.argmax(np.abs(q), axis=0), np.arange(r)])
    return q * np.where(signs == 0, 1.0, signs)


def make_problem(sc_s, sc_d, t, r):
    """Package cost and scaled gradient for :func:`lrgmml.solver.minimize`.

    The most recent evaluation is cached by point, so a cost and a
    gradient requested at the same U share the projected scatters and
    B. ``problem.evaluations`` counts projected-scatter computations.
    """
    _check_t(t)
    if sc_s.d != sc_d.d:
        raise DimensionError(f"scatters disagree on d: {sc_s.d} vs {sc_d.d}")
    cache = {}

    def evaluate(u):
        key = (u.shape, u.tobytes())
        if cache.get("key") != key:
            cache["eval"] = _Evaluation(u, sc_s, sc_d, t)
            cache["key"] = key
            problem.evaluations += 1
        return cache["eval"]

    problem = Problem(
        cost=lambda u: evaluate(u).cost(),
        euclidean_grad=lambda u: GRADIENT_SCALE * evaluate(u).egrad(),
        dims=(sc_s.d, r),
    )
    problem.evaluations = 0
    problem.inner_solution = lambda u: evaluate(u).b
    return problem
