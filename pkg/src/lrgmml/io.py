"""Dataset readers, the text model format, and results files."""

import csv
import math
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .errors import NumericalError
from .objective import MetricModel
from .pipeline import Dataset, ResultRecord

MODEL_MAGIC = "LRGMML v1"
RESULT_COLUMNS = ("dataset", "method", "rank", "t", "run", "error", "seconds", "iterations")
PLOT_COLUMNS = ("dataset", "method", "rank", "mean_error", "std_error", "runs")


class DataFormatError(ValueError):
    """Malformed input file; the message names the offending location."""


class ModelFormatError(ValueError):
    pass


def fmt(x):
    """Shortest text that round-trips a double (17 significant digits at most)."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".17g")


@contextmanager
def atomic_write(path):
    """Yield a text handle; the file appears at ``path`` only on success."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _dense_ids(raw):
    ids = {}
    labels = [ids.setdefault(v, len(ids)) for v in raw]
    return np.array(labels, dtype=int), tuple(ids)


def load_csv(path, label_column="last", has_header=False):
    """Read a comma-separated file with one label column.

    Labels are kept as strings and mapped to class ids in order of first
    appearance. ``label_column`` is ``"last"`` or a 0-based column index.
    """
    path = Path(path)
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if has_header and lineno == 1:
                continue
            if not row or all(not cell.strip() for cell in row):
                continue
            rows.append((lineno, row))
    if not rows:
        raise DataFormatError(f"{path}: file contains no data rows")
    width = len(rows[0][1])
    if width < 2:
        raise DataFormatError(f"{path}: need at least one feature column and a label column")
    col = width - 1 if label_column in ("last", None) else int(label_column)
    if not 0 <= col < width:
        raise DataFormatError(f"{path}: label column {label_column} out of range for {width} columns")

    features, raw_labels = [], []
    for lineno, row in rows:
        if len(row) != width:
            raise DataFormatError(f"{path}: line {lineno} has {len(row)} fields, expected {width}")
        values = []
        for j, cell in enumerate(row):
            if j == col:
                continue
            try:
                value = float(cell)
            except ValueError:
                raise DataFormatError(
                    f"{path}: non-numeric feature {cell!r} at line {lineno}, column {j + 1}"
                ) from None
            if not math.isfinite(value):
                raise DataFormatError(f"{path}: non-finite feature at line {lineno}, column {j + 1}")
            values.append(value)
        features.append(values)
        raw_labels.append(row[col].strip())
    labels, names = _dense_ids(raw_labels)
    return Dataset(np.array(features, dtype=float), labels, path.stem, names)


def load_libsvm(path):
    """Read ``label idx:val ...`` lines (1-based ascending indices) into dense rows."""
    path = Path(path)
    entries, raw_labels = [], []
    d = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split("#", 1)[0].split()
            if not tokens:
                continue
            row, last = {}, 0
            for tok in tokens[1:]:
                try:
                    idx, val = tok.split(":", 1)
                    idx, val = int(idx), float(val)
                except ValueError:
                    raise DataFormatError(f"{path}: malformed entry {tok!r} at line {lineno}") from None
                if idx <= last:
                    raise DataFormatError(f"{path}: indices not ascending at line {lineno}")
                if not math.isfinite(val):
                    raise DataFormatError(f"{path}: non-finite value at line {lineno}")
                row[idx], last = val, idx
            d = max(d, last)
            entries.append(row)
            raw_labels.append(tokens[0])
    if not entries:
        raise DataFormatError(f"{path}: file contains no data rows")
    features = np.zeros((len(entries), d))
    for i, row in enumerate(entries):
        for idx, val in row.items():
            features[i, idx - 1] = val
    labels, names = _dense_ids(raw_labels)
    return Dataset(features, labels, path.stem, names)


def load_dataset(path, label_column="last", has_header=False):
    """Dispatch on extension: ``.svm``/``.libsvm`` are libsvm, else CSV."""
    if Path(path).suffix.lower() in (".svm", ".libsvm"):
        return load_libsvm(path)
    return load_csv(path, label_column, has_header)


def save_model(model, path):
    u, b = np.asarray(model.u), np.asarray(model.b)
    with atomic_write(path) as fh:
        fh.write(MODEL_MAGIC + "\n")
        fh.write(f"{model.d} {model.r} {fmt(model.t)}\n")
        for row in u:
            fh.write(" ".join(fmt(x) for x in row) + "\n")
        for row in b:
            fh.write(" ".join(fmt(x) for x in row) + "\n")


def _rows(lines, start, count, width, what, path):
    out = []
    for k in range(count):
        i = start + k
        if i >= len(lines):
            raise ModelFormatError(f"{path}: dimension mismatch, expected {count} rows of {what}")
        parts = lines[i].split()
        if len(parts) != width:
            raise ModelFormatError(
                f"{path}: dimension mismatch at line {i + 1}, expected {width} values for {what}"
            )
        try:
            out.append([float(p) for p in parts])
        except ValueError:
            raise ModelFormatError(f"{path}: non-numeric value at line {i + 1}") from None
    return np.array(out, dtype=float).reshape(count, width)


def load_model(path):
    """Read a model file and re-check orthonormality and positive definiteness."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != MODEL_MAGIC:
        first = lines[0].strip() if lines else ""
        if first.startswith("LRGMML v"):
            raise ModelFormatError(f"{path}: unsupported model version {first!r}, expected {MODEL_MAGIC!r}")
        raise ModelFormatError(f"{path}: not a model file (bad magic line)")
    try:
        d_s, r_s, t_s = lines[1].split()
        d, r, t = int(d_s), int(r_s), float(t_s)
    except (IndexError, ValueError):
        raise ModelFormatError(f"{path}: malformed header line") from None
    if not 1 <= r <= d:
        raise ModelFormatError(f"{path}: header has invalid dimensions d={d}, r={r}")
    u = _rows(lines, 2, d, r, "U", path)
    b = _rows(lines, 2 + d, r, r, "B", path)
    if any(line.strip() for line in lines[2 + d + r:]):
        raise ModelFormatError(f"{path}: dimension mismatch, trailing rows after B")
    model = MetricModel(u, b, t)
    try:
        model.validate()
    except NumericalError as exc:
        raise ModelFormatError(f"{path}: {exc}") from None
    return model


def write_results(records, path, timing=True):
    """Write a results CSV; with ``timing=False`` seconds are written as nan."""
    with atomic_write(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for rec in records:
            writer.writerow([rec.dataset, rec.method, rec.rank, fmt(rec.t), rec.run, fmt(rec.error),
                             fmt(rec.seconds if timing else float("nan")), rec.iterations])


def append_result(record, path):
    """Append one row, writing the header first if the file is new."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(RESULT_COLUMNS)
        writer.writerow([record.dataset, record.method, record.rank, fmt(record.t), record.run,
                         fmt(record.error), fmt(record.seconds), record.iterations])


def read_results(path):
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
            raise DataFormatError(f"{path}: unexpected results header {reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            try:
                rec = ResultRecord(row["dataset"], row["method"], int(row["rank"]), float(row["t"]),
                                   int(row["run"]), float(row["error"]), float(row["seconds"]),
                                   int(row["iterations"]))
            except (TypeError, ValueError):
                raise DataFormatError(f"{path}: malformed results row at line {lineno}") from None
            if not (math.isnan(rec.error) or 0.0 <= rec.error <= 1.0):
                raise DataFormatError(f"{path}: error rate outside [0, 1] at line {lineno}")
            records.append(rec)
    return records


def write_plot_data(rows, path):
    with atomic_write(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PLOT_COLUMNS)
        for name, method, rank, mean, std, runs in rows:
            writer.writerow([name, method, rank, fmt(mean), fmt(std), runs])


def read_plot_data(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != PLOT_COLUMNS:
            raise DataFormatError(f"{path}: unexpected plot-data header {reader.fieldnames}")
        return [(row["dataset"], row["method"], int(row["rank"]), float(row["mean_error"]),
                 float(row["std_error"]), int(row["runs"])) for row in reader]
