"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 numerical failure.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .errors import DimensionError, NumericalError
from .gradcheck import gradient_check
from .objective import FULL_RANK_GUARD
from .pipeline import (
    Dataset,
    ExperimentConfig,
    ResultRecord,
    default_pair_counts,
    embed,
    generate_pairs,
    knn_error,
    run_experiment,
    select_t,
    standardize,
    summarize,
    train_gmml,
    train_lrgmml,
)
from .solver import BetaRule, SolverOptions

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERICAL = 0, 1, 2, 3
GRADCHECK_TOL = 1e-5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_data_args(p, flag="--data"):
    p.add_argument(flag, required=True, type=Path)
    p.add_argument("--label-column", default="last", help="'last' or a 0-based column index")
    p.add_argument("--header", action="store_true", help="first CSV row is a header")


def _add_solver_args(p):
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--grad-tol", type=float, default=1e-6)
    p.add_argument("--beta-rule", choices=[b.value for b in BetaRule], default=BetaRule.HESTENES_STIEFEL.value)


def build_parser():
    parser = _Parser(prog="lrgmml", description="Low-rank geometric mean metric learning")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="learn a rank-r metric")
    _add_data_args(p)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--t", default="0.5", help="weight in [0, 1] or 'auto'")
    p.add_argument("--pairs", type=int, help="similar and dissimilar pairs to sample (each)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    _add_solver_args(p)

    p = sub.add_parser("eval", help="k-NN error of a saved model")
    p.add_argument("--model", type=Path, required=True)
    _add_data_args(p, "--train")
    p.add_argument("--test", type=Path, required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--results", type=Path, help="results CSV to append to (default: MODEL.results.csv)")

    p = sub.add_parser("sweep", help="repeated-split experiment over ranks")
    _add_data_args(p)
    p.add_argument("--ranks", required=True, help="comma-separated ranks; 'd' means full dimension")
    p.add_argument("--config", type=Path, help="JSON file with ExperimentConfig fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--timing", action="store_true", help="record wall-clock seconds (output no longer reproducible)")

    p = sub.add_parser("gradcheck", help="finite-difference gradient check on a random instance")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t", type=float, default=0.5)
    p.add_argument("--directions", type=int, default=20)

    p = sub.add_parser("gmml-baseline", help="full-rank closed-form metric")
    _add_data_args(p)
    p.add_argument("--t", type=float, default=0.5)
    p.add_argument("--pairs", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    return parser


def _load(path, args):
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    label = args.label_column if args.label_column == "last" else int(args.label_column)
    return io.load_dataset(path, label, args.header)


def _solver(args):
    return SolverOptions(max_iters=args.max_iters, grad_tol=args.grad_tol, beta_rule=args.beta_rule)


def _pairs(labels, count, seed):
    if count is None:
        counts = default_pair_counts(labels)
    elif count < 1:
        raise UsageError("--pairs must be positive")
    else:
        counts = (count, count)
    return generate_pairs(labels, *counts, seed)


def _parse_t(text):
    if text == "auto":
        return None
    try:
        t = float(text)
    except ValueError:
        raise UsageError(f"--t must be a number in [0, 1] or 'auto', got {text!r}") from None
    if not 0 <= t <= 1:
        raise UsageError(f"--t must lie in [0, 1], got {t}")
    return t


def cmd_train(args):
    t = _parse_t(args.t)
    data = _load(args.data, args)
    if not 1 <= args.rank <= data.d:
        raise UsageError(f"--rank must lie in [1, {data.d}] for this dataset")
    solver = _solver(args)
    train = Dataset(standardize(data.features), data.labels, data.name)
    if t is None:
        cfg = ExperimentConfig(rank_list=(args.rank,), seed=args.seed, solver=solver)
        t = select_t(train, "lrgmml", args.rank, cfg, [args.seed, 2])
    pairs = _pairs(train.labels, args.pairs, args.seed)
    model, trace = train_lrgmml(train, pairs, args.rank, t, solver, args.seed)
    io.save_model(model, args.out)
    trace_path = args.out.with_name(args.out.name + ".trace.csv")
    trace.write_csv(trace_path)
    print(f"rank={model.r} t={t:g} iterations={trace.iterations} "
          f"cost={trace.records[-1].cost:.6g} termination={trace.termination_reason.value}")
    print(f"model written to {args.out}; trace written to {trace_path}")
    return EXIT_OK


def cmd_eval(args):
    if args.k < 1:
        raise UsageError("--k must be positive")
    model = io.load_model(args.model) if args.model.is_file() else None
    if model is None:
        raise FileNotFoundError(f"no such file: {args.model}")
    train = _load(args.train, args)
    test = _load(args.test, args)
    if train.d != model.d or test.d != model.d:
        raise DimensionError(f"model expects d={model.d}, data has d={train.d}/{test.d}")
    x_tr, x_te = standardize(train.features, test.features)
    # class ids are assigned per file; compare by original label text
    names = {name: i for i, name in enumerate(train.class_names)}
    test_y = np.array([names.get(test.class_names[c], -1) for c in test.labels])
    error = knn_error(embed(model, x_tr), train.labels, embed(model, x_te), test_y,
                      min(args.k, train.n))
    results = args.results or args.model.with_name(args.model.name + ".results.csv")
    io.append_result(ResultRecord(test.name, "lrgmml", model.r, model.t, 0, error), results)
    print(f"error={error:.6f}")
    return EXIT_OK


def _parse_ranks(text, d):
    ranks = []
    for tok in text.split(","):
        tok = tok.strip()
        r = d if tok == "d" else int(tok) if tok.isdigit() else None
        if r is None or not 1 <= r <= d:
            raise UsageError(f"invalid rank {tok!r} (dataset has d={d})")
        ranks.append(r)
    return tuple(ranks)


def _load_config(path):
    if path is None:
        return {}
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    cfg = json.loads(path.read_text(encoding="utf-8"))
    if "solver" in cfg:
        cfg["solver"] = SolverOptions(**cfg["solver"])
    for key in ("rank_list", "t_grid", "methods"):
        if key in cfg:
            cfg[key] = tuple(cfg[key])
    return cfg


def cmd_sweep(args):
    data = _load(args.data, args)
    ranks = _parse_ranks(args.ranks, data.d)
    try:
        cfg = ExperimentConfig(**{"rank_list": ranks, **_load_config(args.config)})
        overrides = {k: v for k, v in (("seed", args.seed), ("num_runs", args.runs)) if v is not None}
        cfg = replace(cfg, rank_list=ranks, **overrides)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad configuration: {exc}") from None
    records = run_experiment(data, cfg)
    io.write_results(records, args.out, timing=args.timing)
    plot_path = args.out.with_name(args.out.stem + ".plot.csv")
    rows = summarize(records)
    io.write_plot_data(rows, plot_path)
    for name, method, rank, mean, std, runs in rows:
        print(f"{name} {method:9s} rank={rank:<4d} error={mean:.4f} +/- {std:.4f} (runs={runs})")
    print(f"results written to {args.out}; plot data written to {plot_path}")
    return EXIT_OK


def cmd_gradcheck(args):
    if not 1 <= args.rank <= args.d:
        raise UsageError("need 1 <= --rank <= --d")
    if not 0 <= args.t <= 1:
        raise UsageError("--t must lie in [0, 1]")
    res = gradient_check(args.d, args.rank, args.seed, args.t, args.directions)
    print(f"kappa={res.kappa:.12g} kappa_rel_std={res.kappa_rel_std:.3g} "
          f"max_rel_error={res.max_rel_error:.3g}")
    return EXIT_OK if res.max_rel_error <= GRADCHECK_TOL else EXIT_NUMERICAL


def cmd_gmml_baseline(args):
    if not 0 <= args.t <= 1:
        raise UsageError("--t must lie in [0, 1]")
    data = _load(args.data, args)
    if data.d > FULL_RANK_GUARD:
        raise UsageError(f"d={data.d} exceeds the full-rank guard ({FULL_RANK_GUARD}); use 'train'")
    features = standardize(data.features)
    model = train_gmml(features, _pairs(data.labels, args.pairs, args.seed), args.t)
    io.save_model(model, args.out)
    print(f"full-rank metric (d={model.d}, t={args.t:g}) written to {args.out}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "gradcheck": cmd_gradcheck,
    "gmml-baseline": cmd_gmml_baseline,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"lrgmml: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, io.DataFormatError, io.ModelFormatError, DimensionError) as exc:
        print(f"lrgmml: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"lrgmml: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"lrgmml: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
