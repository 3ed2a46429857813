"""Riemannian conjugate gradients on Grass(r, d) with Armijo backtracking."""

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import DimensionError, NumericalError
from .grassmann import orthonormality_error, project_tangent, retract, tangent_inner, transport


class BetaRule(str, enum.Enum):
    HESTENES_STIEFEL = "hestenes-stiefel"
    POLAK_RIBIERE = "polak-ribiere"
    STEEPEST_DESCENT = "steepest-descent"


class Termination(str, enum.Enum):
    GRAD_TOL = "GradTol"
    MAX_ITERS = "MaxIters"
    LINE_SEARCH_FAILURE = "LineSearchFailure"


class LineSearchFailure(RuntimeError):
    """No trial step met the sufficient-decrease condition."""


@dataclass
class Problem:
    """Cost and Euclidean gradient of a function of a (d, r) orthonormal matrix."""

    cost: Callable[[np.ndarray], float]
    euclidean_grad: Callable[[np.ndarray], np.ndarray]
    dims: tuple


@dataclass
class SolverOptions:
    max_iters: int = 200
    grad_tol: float = 1e-6
    armijo_c1: float = 1e-4
    backtrack_factor: float = 0.5
    max_line_search: int = 30
    initial_step: float = 1.0
    beta_rule: BetaRule = BetaRule.HESTENES_STIEFEL

    def __post_init__(self):
        self.beta_rule = BetaRule(self.beta_rule)
        if not 0 < self.armijo_c1 < 1:
            raise ValueError(f"armijo_c1 must lie in (0, 1), got {self.armijo_c1}")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError(f"backtrack_factor must lie in (0, 1), got {self.backtrack_factor}")
        if self.max_iters < 0 or self.max_line_search < 1 or self.initial_step <= 0:
            raise ValueError("max_iters >= 0, max_line_search >= 1 and initial_step > 0 required")


@dataclass
class IterationRecord:
    iter: int
    cost: float
    grad_norm: float
    step: float
    ls_evals: int
    restarted: bool
    # not part of the CSV; kept for post-hoc checks
    slope: float = float("nan")
    orth_error: float = 0.0


TRACE_COLUMNS = ("iter", "cost", "grad_norm", "step", "ls_evals", "restarted")


@dataclass
class SolverTrace:
    records: list = field(default_factory=list)
    termination_reason: Termination = None

    @property
    def iterations(self):
        return len(self.records) - 1

    @property
    def costs(self):
        return np.array([rec.cost for rec in self.records])

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(TRACE_COLUMNS)
            for rec in self.records:
                writer.writerow(
                    [rec.iter, repr(rec.cost), repr(rec.grad_norm), repr(rec.step),
                     rec.ls_evals, int(rec.restarted)]
                )

    @classmethod
    def read_csv(cls, path):
        trace = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
                raise ValueError(f"{path}: unexpected trace header {reader.fieldnames}")
            for row in reader:
                trace.records.append(IterationRecord(
                    int(row["iter"]), float(row["cost"]), float(row["grad_norm"]),
                    float(row["step"]), int(row["ls_evals"]), bool(int(row["restarted"]))))
        return trace


class LineSearchResult(NamedTuple):
    step: float
    point: np.ndarray
    cost: float
    evals: int


def line_search_armijo(problem, u, direction, f0, slope, opts, step0=None):
    """Backtrack from ``step0`` until ``f(R(u, step*dir)) <= f0 + c1*step*slope``.

    Raises
    ------
    LineSearchFailure
        If ``opts.max_line_search`` trials all fail.
    """
    if not slope < 0:
        raise ValueError(f"direction is not a descent direction (slope {slope:g})")
    step = opts.initial_step if step0 is None else step0
    for evals in range(1, opts.max_line_search + 1):
        candidate = retract(u, direction, step)
        f_new = problem.cost(candidate)
        if f_new <= f0 + opts.armijo_c1 * step * slope:
            return LineSearchResult(step, candidate, float(f_new), evals)
        step *= opts.backtrack_factor
    raise LineSearchFailure(
        f"no sufficient decrease after {opts.max_line_search} trials (last step {step:g})"
    )


def _checked(value, what, it):
    if not np.all(np.isfinite(value)):
        raise NumericalError(f"non-finite {what} at iterate {it}")
    return value


def _beta(rule, grad_new, grad_old_t, dir_old_t, grad_old_sq):
    if rule is BetaRule.STEEPEST_DESCENT:
        return 0.0
    diff = grad_new - grad_old_t
    num = tangent_inner(grad_new, diff)
    if rule is BetaRule.HESTENES_STIEFEL:
        den = tangent_inner(dir_old_t, diff)
    else:
        den = grad_old_sq
    if den == 0:
        return 0.0
    return num / den


def minimize(problem, u0, opts=None, callback=None):
    """Minimize ``problem`` over the Grassmann manifold starting at ``u0``.

    Parameters
    ----------
    problem : Problem
    u0 : ndarray, shape (d, r)
        Orthonormal starting point.
    opts : SolverOptions, optional
    callback : callable, optional
        Called as ``callback(u, record)`` after every accepted iterate.

    Returns
    -------
    u : ndarray, shape (d, r)
        Final iterate.
    trace : SolverTrace
    """
    opts = opts or SolverOptions()
    u = np.asarray(u0, dtype=float)
    if u.shape != tuple(problem.dims):
        raise DimensionError(f"starting point has shape {u.shape}, problem expects {problem.dims}")

    trace = SolverTrace()
    f = float(_checked(problem.cost(u), "cost", 0))
    grad = project_tangent(u, _checked(problem.euclidean_grad(u), "gradient", 0))
    grad_sq = tangent_inner(grad, grad)
    rec = IterationRecord(0, f, math.sqrt(grad_sq), 0.0, 0, False, orth_error=orthonormality_error(u))
    trace.records.append(rec)
    if callback:
        callback(u, rec)

    direction = -grad
    restarted = False
    step_guess = opts.initial_step
    it = 0
    while True:
        if math.sqrt(grad_sq) <= opts.grad_tol * max(1.0, abs(f)):
            trace.termination_reason = Termination.GRAD_TOL
            break
        if it >= opts.max_iters:
            trace.termination_reason = Termination.MAX_ITERS
            break
        it += 1

        slope = tangent_inner(grad, direction)
        if not slope < 0:
            direction, restarted = -grad, True
            slope = -grad_sq
        try:
            ls = line_search_armijo(problem, u, direction, f, slope, opts, step_guess)
        except LineSearchFailure:
            if restarted:
                trace.termination_reason = Termination.LINE_SEARCH_FAILURE
                break
            direction, restarted = -grad, True
            slope = -grad_sq
            try:
                ls = line_search_armijo(problem, u, direction, f, slope, opts, opts.initial_step)
            except LineSearchFailure:
                trace.termination_reason = Termination.LINE_SEARCH_FAILURE
                break

        u_new = ls.point
        f_new = float(_checked(ls.cost, "cost", it))
        grad_new = project_tangent(u_new, _checked(problem.euclidean_grad(u_new), "gradient", it))
        grad_new_sq = tangent_inner(grad_new, grad_new)

        rec = IterationRecord(it, f_new, math.sqrt(grad_new_sq), ls.step, ls.evals, restarted,
                              slope=slope, orth_error=orthonormality_error(u_new))
        trace.records.append(rec)
        if callback:
            callback(u_new, rec)

        dir_t = transport(u_new, direction)
        beta = _beta(opts.beta_rule, grad_new, transport(u_new, grad), dir_t, grad_sq)
        restarted = False
        if not (beta >= 0 and math.isfinite(beta)):
            beta, restarted = 0.0, True
        direction = -grad_new + beta * dir_t

        u, f, grad, grad_sq = u_new, f_new, grad_new, grad_new_sq
        step_guess = min(2.0 * ls.step, opts.initial_step)

    return u, trace
