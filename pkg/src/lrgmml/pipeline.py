"""Pair sampling, training, embedding and k-NN evaluation."""

import logging
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DimensionError, NumericalError
from .objective import (
    FULL_RANK_GUARD,
    MetricModel,
    build_scatter,
    gmml_closed_form,
    initial_point,
    make_problem,
)
from .solver import SolverOptions, minimize

log = logging.getLogger(__name__)

METHODS = ("euclidean", "gmml", "lrgmml")


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    name: str = "data"
    class_names: tuple = ()

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise DimensionError(
                f"{self.name}: {len(self.labels)} labels for features of shape {self.features.shape}"
            )
        if not np.all(np.isfinite(self.features)):
            raise ValueError(f"{self.name}: features contain non-finite values")

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]

    @property
    def n_classes(self):
        return len(np.unique(self.labels))

    def subset(self, idx):
        return Dataset(self.features[idx], self.labels[idx], self.name, self.class_names)


@dataclass
class ExperimentConfig:
    rank_list: tuple = ()
    t_grid: tuple = (0.1, 0.3, 0.5, 0.7, 0.9)
    k_neighbors: int = 5
    num_runs: int = 5
    train_fraction: float = 0.7
    pairs_per_class_pair: int = 40
    seed: int = 0
    solver: SolverOptions = field(default_factory=SolverOptions)
    methods: tuple = METHODS

    def __post_init__(self):
        if not self.t_grid or not self.methods:
            raise ValueError("t_grid and methods must be non-empty")
        if "lrgmml" in self.methods and not self.rank_list:
            raise ValueError("rank_list must be non-empty when lrgmml is requested")
        if not 0 < self.train_fraction < 1:
            raise ValueError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if any(not 0 < t < 1 for t in self.t_grid):
            raise ValueError(f"t_grid values must lie in (0, 1), got {self.t_grid}")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        if self.k_neighbors < 1 or self.num_runs < 1:
            raise ValueError("k_neighbors and num_runs must be positive")


@dataclass
class ResultRecord:
    dataset: str
    method: str
    rank: int
    t: float
    run: int
    error: float
    seconds: float = float("nan")
    iterations: int = 0


def standardize(train, *others):
    """z-score every array with the mean and std of ``train``."""
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    std[std == 0] = 1.0
    out = [(train - mean) / std] + [(x - mean) / std for x in others]
    return out if others else out[0]


def stratified_split(labels, fraction, rng):
    """Per-class random split; returns sorted (first, second) index arrays."""
    first, second = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        m = int(round(fraction * len(idx)))
        m = min(max(m, 1), len(idx) - 1) if len(idx) > 1 else len(idx)
        first.append(idx[:m])
        second.append(idx[m:])
    return np.sort(np.concatenate(first)), np.sort(np.concatenate(second))


def available_pairs(labels):
    """Numbers of distinct same-class and different-class index pairs."""
    counts = np.bincount(np.unique(labels, return_inverse=True)[1])
    same = int(np.sum(counts * (counts - 1) // 2))
    total = len(labels) * (len(labels) - 1) // 2
    return same, total - same


def default_pair_counts(labels, per_class_pair=40):
    c = len(np.unique(labels))
    want = per_class_pair * c * (c - 1)
    same, diff = available_pairs(labels)
    return min(want, same), min(want, diff)


def generate_pairs(labels, count_s, count_d, seed):
    """Sample similar and dissimilar index pairs ``(i, j)`` with ``i < j``.

    Each draw is uniform over the distinct same-class (resp.
    different-class) pairs; draws are independent, so repeats can occur.
    """
    if count_s < 1 or count_d < 1:
        raise ValueError("pair counts must be positive")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    members = [np.flatnonzero(labels == c) for c in classes]
    sizes = np.array([len(m) for m in members])

    for c, size in zip(classes, sizes):
        if size < 2:
            warnings.warn(f"class {c} has fewer than 2 samples; excluded from similar pairs")
    same_w = sizes * (sizes - 1) / 2.0
    if same_w.sum() == 0:
        raise ValueError("no class has two samples; similar pairs cannot be formed")
    if len(classes) < 2:
        raise ValueError("a single class gives no dissimilar pairs")

    similar = np.empty((count_s, 2), dtype=int)
    cls = rng.choice(len(classes), size=count_s, p=same_w / same_w.sum())
    for k, c in enumerate(cls):
        similar[k] = rng.choice(members[c], size=2, replace=False)

    a, b = np.triu_indices(len(classes), k=1)
    cross_w = (sizes[a] * sizes[b]).astype(float)
    dissimilar = np.empty((count_d, 2), dtype=int)
    which = rng.choice(len(a), size=count_d, p=cross_w / cross_w.sum())
    for k, w in enumerate(which):
        dissimilar[k] = rng.choice(members[a[w]]), rng.choice(members[b[w]])

    similar.sort(axis=1)
    dissimilar.sort(axis=1)
    return similar, dissimilar


def train_lrgmml(train, pairs, r, t, solver=None, seed=0):
    """Learn a rank-r metric on ``train`` from ``(similar, dissimilar)`` pairs.

    Returns
    -------
    model : MetricModel
    trace : SolverTrace
    """
    features = train.features if isinstance(train, Dataset) else np.asarray(train, dtype=float)
    d = features.shape[1]
    if not 1 <= r <= d:
        raise ValueError(f"rank must lie in [1, {d}], got {r}")
    sc_s = build_scatter(features, pairs[0])
    sc_d = build_scatter(features, pairs[1])
    problem = make_problem(sc_s, sc_d, t, r)
    u, trace = minimize(problem, initial_point(sc_d, r, seed), solver or SolverOptions())
    return MetricModel(u, problem.inner_solution(u), t), trace


def train_gmml(train, pairs, t):
    """Full-rank closed-form metric, wrapped as a model with ``U = I``."""
    features = train.features if isinstance(train, Dataset) else np.asarray(train, dtype=float)
    d = features.shape[1]
    a = gmml_closed_form(build_scatter(features, pairs[0]), build_scatter(features, pairs[1]), t, d)
    return MetricModel(np.eye(d), a, t)


def euclidean_model(d):
    return MetricModel(np.eye(d), np.eye(d), float("nan"))


def embed(model, points):
    """Map rows x to ``B^{1/2} U^T x``; squared distances become d_A."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != model.d:
        raise DimensionError(f"points have {points.shape[1]} features, model expects {model.d}")
    return points @ model.transformer().T


def knn_predict(train_x, train_y, test_x, k):
    train_y = np.asarray(train_y)
    if k < 1 or k > len(train_x):
        raise ValueError(f"k must lie in [1, {len(train_x)}], got {k}")
    dist = np.sqrt(cdist(test_x, train_x, "sqeuclidean"))
    # stable sort keeps training order among equal distances
    nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
    preds = np.empty(len(test_x), dtype=train_y.dtype)
    for i, nb in enumerate(nearest):
        labels = train_y[nb]
        best = None
        for c in np.unique(labels):
            mask = labels == c
            key = (-int(mask.sum()), float(dist[i, nb[mask]].sum()), c)
            if best is None or key < best:
                best = key
        preds[i] = best[2]
    return preds


def knn_error(train_x, train_y, test_x, test_y, k):
    """Fraction of test rows misclassified by majority vote of k neighbours.

    Vote ties go to the class with the smallest summed distance, then the
    smallest class id; distance ties go to the earlier training row.
    """
    if len(test_x) == 0:
        raise ValueError("test set is empty")
    preds = knn_predict(train_x, train_y, test_x, k)
    return float(np.mean(preds != np.asarray(test_y)))


def _pick_t(errors, t_grid):
    # ties favour the unweighted midpoint t = 0.5
    return min(zip(errors, (abs(t - 0.5) for t in t_grid), t_grid))[2]


def select_t(train, method, r, cfg, rng_seed):
    """Choose t by k-NN error on an inner 80/20 split of ``train``."""
    rng = np.random.default_rng(rng_seed)
    inner, val = stratified_split(train.labels, 0.8, rng)
    x_in, x_val = train.features[inner], train.features[val]
    y_in, y_val = train.labels[inner], train.labels[val]
    pairs = generate_pairs(y_in, *default_pair_counts(y_in, cfg.pairs_per_class_pair), rng_seed)
    k = min(cfg.k_neighbors, len(x_in))
    errors = []
    for t in cfg.t_grid:
        try:
            if method == "gmml":
                model = train_gmml(x_in, pairs, t)
            else:
                model = train_lrgmml(x_in, pairs, r, t, cfg.solver, rng_seed)[0]
            errors.append(knn_error(embed(model, x_in), y_in, embed(model, x_val), y_val, k))
        except (NumericalError, ValueError) as exc:
            log.warning("t=%g failed during selection: %s", t, exc)
            errors.append(math.inf)
    if all(math.isinf(e) for e in errors):
        raise NumericalError(f"{method}: every t in the grid failed")
    return _pick_t(errors, cfg.t_grid)


def run_experiment(data, cfg):
    """Repeated split / train / evaluate protocol.

    Every run draws a stratified train/test split, standardizes with the
    training statistics, samples pairs among training rows only, and
    evaluates each method. t is chosen per (run, method, rank) on an
    inner split of the training rows. A failing cell is recorded with a
    NaN error instead of aborting the sweep.
    """
    records = []
    for run in range(cfg.num_runs):
        rng = np.random.default_rng([cfg.seed, run])
        tr, te = stratified_split(data.labels, cfg.train_fraction, rng)
        x_tr, x_te = standardize(data.features[tr], data.features[te])
        train = Dataset(x_tr, data.labels[tr], data.name)
        y_te = data.labels[te]
        pairs = generate_pairs(train.labels, *default_pair_counts(train.labels, cfg.pairs_per_class_pair),
                               [cfg.seed, run, 1])
        k = min(cfg.k_neighbors, train.n)
        inner_seed = [cfg.seed, run, 2]

        cells = []
        if "euclidean" in cfg.methods:
            cells.append(("euclidean", data.d))
        if "gmml" in cfg.methods and data.d <= FULL_RANK_GUARD:
            cells.append(("gmml", data.d))
        if "lrgmml" in cfg.methods:
            cells.extend(("lrgmml", r) for r in cfg.rank_list)

        for method, r in cells:
            start = time.perf_counter()
            t, iterations = float("nan"), 0
            try:
                if method == "euclidean":
                    model = euclidean_model(data.d)
                elif method == "gmml":
                    t = select_t(train, method, r, cfg, inner_seed)
                    model = train_gmml(train, pairs, t)
                else:
                    t = select_t(train, method, r, cfg, inner_seed)
                    model, trace = train_lrgmml(train, pairs, r, t, cfg.solver, [cfg.seed, run, r])
                    iterations = trace.iterations
                error = knn_error(embed(model, x_tr), train.labels, embed(model, x_te), y_te, k)
            except (NumericalError, ValueError) as exc:
                log.warning("run %d %s rank %d failed: %s", run, method, r, exc)
                error, iterations = float("nan"), -1
            records.append(ResultRecord(data.name, method, int(r), t, run, error,
                                        time.perf_counter() - start, iterations))
    order = {m: i for i, m in enumerate(METHODS)}
    records.sort(key=lambda rec: (rec.run, rec.rank, order[rec.method]))
    return records


def summarize(records):
    """Mean and sample std of the error per (dataset, method, rank)."""
    groups = {}
    for rec in records:
        if not math.isnan(rec.error):
            groups.setdefault((rec.dataset, rec.method, rec.rank), []).append(rec.error)
    rows = []
    for (name, method, rank), errs in sorted(groups.items(), key=lambda kv: (kv[0][0], METHODS.index(kv[0][1]), kv[0][2])):
        errs = np.asarray(errs)
        std = float(errs.std(ddof=1)) if len(errs) > 1 else 0.0
        rows.append((name, method, rank, float(errs.mean()), std, len(errs)))
    return rows
