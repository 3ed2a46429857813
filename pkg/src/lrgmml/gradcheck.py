"""Finite-difference check of the analytic gradient along tangent directions."""

from dataclasses import dataclass

import numpy as np

from .grassmann import project_tangent, random_point, retract, tangent_inner
from .objective import build_scatter, cost, egrad


@dataclass
class GradCheckResult:
    kappa: float
    kappa_rel_std: float
    max_rel_error: float
    ratios: np.ndarray
    rel_errors: np.ndarray


def random_instance(d, r, seed):
    """Random anisotropic data with random similar/dissimilar pairs and a start point."""
    rng = np.random.default_rng(seed)
    n = 3 * d + 10
    points = rng.standard_normal((n, d)) * rng.uniform(0.5, 2.0, size=d)
    sim = rng.integers(0, n, size=(4 * d, 2))
    dis = rng.integers(0, n, size=(4 * d, 2))
    return build_scatter(points, sim), build_scatter(points, dis), random_point(d, r, rng.integers(2**31))


def directional_derivatives(u, sc_s, sc_d, t, directions, h=None):
    """Central differences of the cost through the retraction, and the
    matching analytic values ``<proj(egrad), xi>``."""
    h = 1e-5 * np.linalg.norm(u) if h is None else h
    g = project_tangent(u, egrad(u, sc_s, sc_d, t))
    fd, an = [], []
    for xi in directions:
        plus = cost(retract(u, xi, h), sc_s, sc_d, t)
        minus = cost(retract(u, xi, -h), sc_s, sc_d, t)
        fd.append((plus - minus) / (2 * h))
        an.append(tangent_inner(g, xi))
    return np.array(fd), np.array(an)


def random_directions(u, n, rng):
    out = []
    for _ in range(n):
        xi = project_tangent(u, rng.standard_normal(u.shape))
        out.append(xi / np.linalg.norm(xi))
    return out


def summarize_ratios(fd, an):
    ratios = fd / an
    kappa = float(np.mean(ratios))
    rel = np.abs(fd - kappa * an) / np.abs(fd)
    return GradCheckResult(kappa, float(np.std(ratios) / abs(kappa)), float(rel.max()), ratios, rel)


def gradient_check(d, r, seed, t=0.5, n_directions=20):
    """Estimate the constant relating finite differences to :func:`egrad`."""
    sc_s, sc_d, u = random_instance(d, r, seed)
    rng = np.random.default_rng([seed, 1])
    fd, an = directional_derivatives(u, sc_s, sc_d, t, random_directions(u, n_directions, rng))
    return summarize_ratios(fd, an)
