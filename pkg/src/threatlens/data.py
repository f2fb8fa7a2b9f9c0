"""Flow-record ingestion and preprocessing.

The pipeline is: load a CSV with a declared column schema, fill missing
values (column median for continuous, modal category for categorical),
integer-code categorical columns, scale every feature to [0, 1], and
finally slice rows into fixed-length windows for the sequence model.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .rng import RngState

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"
DEFAULT_MISSING = ("", "nan", "-")


@dataclass
class RawTable:
    columns: list[str]
    kinds: list[str]                      # parallel to columns
    rows: list[list]                      # cells are str or None (missing)
    imputation: dict[str, float | str] = field(default_factory=dict)

    def column_index(self, name: str) -> int:
        try:
            return self.columns.index(name)
        except ValueError:
            raise DataError(f"no column named {name!r}") from None


@dataclass
class EncodedDataset:
    """Numeric feature matrix plus everything needed to reproduce it."""

    X: np.ndarray                         # [n, d] float64
    y: np.ndarray                         # [n] int64 class codes
    class_names: list[str]
    feature_names: list[str]
    feature_kinds: list[str]
    encoders: dict[str, dict[str, int]]   # categorical column -> category map
    imputation: dict[str, float | str]
    scaler_min: np.ndarray | None = None  # None until minmax_scale ran
    scaler_max: np.ndarray | None = None
    degenerate: np.ndarray | None = None  # bool flags for max == min features
    clamp_eval: bool = True

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def provenance_hash(self) -> str:
        """Stable digest of the fitted encoders/scaler/imputation."""
        payload = {
            "feature_names": self.feature_names,
            "encoders": self.encoders,
            "imputation": self.imputation,
            "scaler_min": None if self.scaler_min is None else self.scaler_min.tolist(),
            "scaler_max": None if self.scaler_max is None else self.scaler_max.tolist(),
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class SequenceSet:
    windows: np.ndarray                   # [N, W, d]
    labels: np.ndarray                    # [N]
    window: int
    stride: int


@dataclass
class FoldPlan:
    folds: list[np.ndarray]               # disjoint index arrays
    class_histograms: list[dict[int, int]]

    @property
    def k(self) -> int:
        return len(self.folds)


# ----------------------------------------------------------------------
# loading and imputation
# ----------------------------------------------------------------------
def load_csv(path, schema: dict[str, str],
             missing_markers=DEFAULT_MISSING) -> RawTable:
    """Read ``path`` keeping only the columns named in ``schema``.

    ``schema`` maps column name -> kind ("continuous" | "categorical").
    Cells matching a missing marker (case-insensitive, after stripping)
    become None.  File columns absent from the schema are dropped; schema
    columns absent from the file are an error.
    """
    for name, kind in schema.items():
        if kind not in (CONTINUOUS, CATEGORICAL):
            raise DataError(f"column {name!r}: unknown kind {kind!r}")
    markers = {m.strip().lower() for m in missing_markers}
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected a header row") from None
        missing_cols = [c for c in schema if c not in header]
        if missing_cols:
            raise DataError(f"columns in schema but not in {path}: {missing_cols}")
        keep = [i for i, c in enumerate(header) if c in schema]
        columns = [header[i] for i in keep]
        kinds = [schema[c] for c in columns]
        rows = []
        for line_no, raw in enumerate(reader, start=2):
            if len(raw) != len(header):
                raise DataError(f"{path}: row at line {line_no} has "
                                f"{len(raw)} fields, expected {len(header)}")
            row = []
            for i in keep:
                cell = raw[i].strip()
                row.append(None if cell.lower() in markers else cell)
            rows.append(row)
    return RawTable(columns=columns, kinds=kinds, rows=rows)


def _parse_float(cell: str, column: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise DataError(f"column {column!r}: cannot parse {cell!r} "
                        "as a number") from None


def impute_median(table: RawTable) -> RawTable:
    """Fill missing cells: continuous -> column median, categorical -> mode.

    The median of an even count is the mean of the two middle values.  Modal
    ties resolve to the lexicographically smallest category.  Idempotent.
    """
    n_cols = len(table.columns)
    out_rows = [list(r) for r in table.rows]
    imputation: dict[str, float | str] = dict(table.imputation)
    for j in range(n_cols):
        name, kind = table.columns[j], table.kinds[j]
        observed = [r[j] for r in table.rows if r[j] is not None]
        holes = [i for i, r in enumerate(table.rows) if r[j] is None]
        if not holes:
            continue
        if not observed:
            raise DataError(f"column {name!r} has no observed values to "
                            "impute from")
        if kind == CONTINUOUS:
            values = np.array([_parse_float(c, name) for c in observed])
            fill = float(np.median(values))
            fill_cell = repr(fill)
        else:
            counts: dict[str, int] = {}
            for c in observed:
                counts[c] = counts.get(c, 0) + 1
            best = max(counts.values())
            fill = min(c for c, k in counts.items() if k == best)
            fill_cell = fill
        imputation[name] = fill
        for i in holes:
            out_rows[i][j] = fill_cell
    return RawTable(columns=list(table.columns), kinds=list(table.kinds),
                    rows=out_rows, imputation=imputation)


# ----------------------------------------------------------------------
# encoding and scaling
# ----------------------------------------------------------------------
def encode_labels(table: RawTable, label_column: str) -> EncodedDataset:
    """Integer-code categorical columns and extract the class labels.

    Codes are assigned in ascending lexicographic order of the category
    strings, so the mapping is stable across runs.  The result is not yet
    scaled (``scaler_min`` is None).
    """
    label_idx = table.column_index(label_column)
    for i, row in enumerate(table.rows):
        if any(cell is None for cell in row):
            raise DataError(f"row {i}: missing cells remain; run impute_median first")

    label_cats = sorted({row[label_idx] for row in table.rows}) if table.rows else []
    label_map = {c: k for k, c in enumerate(label_cats)}
    y = np.array([label_map[row[label_idx]] for row in table.rows], dtype=np.int64)

    feature_idx = [j for j in range(len(table.columns)) if j != label_idx]
    encoders: dict[str, dict[str, int]] = {}
    cols = []
    for j in feature_idx:
        name, kind = table.columns[j], table.kinds[j]
        cells = [row[j] for row in table.rows]
        if kind == CATEGORICAL:
            cats = sorted(set(cells))
            mapping = {c: k for k, c in enumerate(cats)}
            encoders[name] = mapping
            cols.append(np.array([mapping[c] for c in cells], dtype=np.float64))
        else:
            cols.append(np.array([_parse_float(c, name) for c in cells]))
    X = np.column_stack(cols) if cols else np.zeros((len(table.rows), 0))
    return EncodedDataset(
        X=X, y=y, class_names=label_cats,
        feature_names=[table.columns[j] for j in feature_idx],
        feature_kinds=[table.kinds[j] for j in feature_idx],
        encoders=encoders, imputation=dict(table.imputation))


def decode_category(dataset: EncodedDataset, column: str, code: int) -> str:
    inverse = {v: k for k, v in dataset.encoders[column].items()}
    return inverse[int(code)]


def minmax_scale(dataset: EncodedDataset, fit_indices=None) -> EncodedDataset:
    """Scale every feature to [0, 1] with x' = (x - min) / (max - min).

    Statistics come from ``fit_indices`` rows only (all rows when None), so
    a training split can be used without leaking held-out values.  A
    constant feature maps to 0.0 and is flagged degenerate.
    """
    X = dataset.X
    fit = X if fit_indices is None else X[np.asarray(fit_indices)]
    if fit.shape[0] == 0:
        raise DataError("cannot fit a scaler on zero rows")
    lo = fit.min(axis=0)
    hi = fit.max(axis=0)
    degenerate = hi == lo
    span = np.where(degenerate, 1.0, hi - lo)
    scaled = (X - lo) / span
    scaled[:, degenerate] = 0.0
    if dataset.clamp_eval:
        scaled = np.clip(scaled, 0.0, 1.0)
    return EncodedDataset(
        X=scaled, y=dataset.y.copy(), class_names=list(dataset.class_names),
        feature_names=list(dataset.feature_names),
        feature_kinds=list(dataset.feature_kinds),
        encoders=dataset.encoders, imputation=dict(dataset.imputation),
        scaler_min=lo.copy(), scaler_max=hi.copy(),
        degenerate=degenerate.copy(), clamp_eval=dataset.clamp_eval)


def apply_scaler(dataset: EncodedDataset, X_new: np.ndarray) -> np.ndarray:
    """Scale held-out rows with the stored statistics."""
    if dataset.scaler_min is None:
        raise DataError("dataset has no fitted scaler")
    span = np.where(dataset.degenerate, 1.0, dataset.scaler_max - dataset.scaler_min)
    out = (np.asarray(X_new, dtype=np.float64) - dataset.scaler_min) / span
    out[:, dataset.degenerate] = 0.0
    if dataset.clamp_eval:
        out = np.clip(out, 0.0, 1.0)
    return out


def unscale(dataset: EncodedDataset, X_scaled: np.ndarray) -> np.ndarray:
    """Inverse of the min-max transform (degenerate features map to min)."""
    if dataset.scaler_min is None:
        raise DataError("dataset has no fitted scaler")
    span = np.where(dataset.degenerate, 0.0, dataset.scaler_max - dataset.scaler_min)
    return np.asarray(X_scaled) * span + dataset.scaler_min


def preprocess(table: RawTable, label_column: str,
               fit_indices=None, clamp_eval: bool = True) -> EncodedDataset:
    """impute -> encode -> scale, the full three-step chain."""
    encoded = encode_labels(impute_median(table), label_column)
    encoded.clamp_eval = clamp_eval
    return minmax_scale(encoded, fit_indices=fit_indices)


# ----------------------------------------------------------------------
# sequences and folds
# ----------------------------------------------------------------------
def make_sequences(dataset: EncodedDataset, window: int = 10, stride: int = 1,
                   partitions=None) -> SequenceSet:
    """Sliding windows over rows; a window's label is its final row's label.

    ``partitions`` optionally lists contiguous (start, end) row ranges that
    windows may not straddle (e.g. separate capture files); default is one
    partition covering everything.
    """
    if window < 1:
        raise DataError(f"window must be >= 1, got {window}")
    if stride < 1:
        raise DataError(f"stride must be >= 1, got {stride}")
    n = dataset.X.shape[0]
    if partitions is None:
        partitions = [(0, n)]
    chunks = []
    labels = []
    for start, end in partitions:
        length = end - start
        if length < window:
            raise DataError(f"partition [{start}, {end}) has {length} rows, "
                            f"shorter than window {window}")
        for ofs in range(0, length - window + 1, stride):
            chunks.append(dataset.X[start + ofs:start + ofs + window])
            labels.append(dataset.y[start + ofs + window - 1])
    return SequenceSet(windows=np.stack(chunks), labels=np.array(labels,
                       dtype=np.int64), window=window, stride=stride)


def stratified_kfold(labels, k: int, rng: RngState) -> FoldPlan:
    """Shuffled per-class round-robin assignment into k folds."""
    labels = np.asarray(labels)
    if k < 2:
        raise DataError(f"k must be >= 2, got {k}")
    classes = np.unique(labels)
    for c in classes:
        count = int((labels == c).sum())
        if count < k:
            raise DataError(f"class {c} has only {count} members, "
                            f"fewer than k={k} folds")
    buckets: list[list[int]] = [[] for _ in range(k)]
    for c in classes:
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        for pos, i in enumerate(idx):
            buckets[pos % k].append(int(i))
    folds = [np.array(sorted(b), dtype=np.int64) for b in buckets]
    histograms = []
    for f in folds:
        hist = {int(c): int((labels[f] == c).sum()) for c in classes}
        histograms.append(hist)
    return FoldPlan(folds=folds, class_histograms=histograms)


def augment_sequences(real: SequenceSet, synthetic: SequenceSet,
                      ratio: float, rng: RngState) -> SequenceSet:
    """Mix synthetic windows into the real set, per class.

    For each class with ``n`` real windows, ``round(ratio * n)`` synthetic
    windows of that class are drawn (with replacement when the synthetic
    pool is smaller).  Classes absent from the synthetic pool stay
    unaugmented.
    """
    if real.window != synthetic.window:
        raise DataError(f"window lengths differ: real {real.window}, "
                        f"synthetic {synthetic.window}")
    picks = []
    for c in np.unique(real.labels):
        pool = np.flatnonzero(synthetic.labels == c)
        if pool.size == 0:
            continue
        want = int(round(ratio * int((real.labels == c).sum())))
        if want == 0:
            continue
        chosen = pool[rng.integers(pool.size, (want,))]
        picks.append(chosen)
    if not picks:
        return SequenceSet(real.windows.copy(), real.labels.copy(),
                           real.window, real.stride)
    sel = np.concatenate(picks)
    return SequenceSet(
        windows=np.concatenate([real.windows, synthetic.windows[sel]]),
        labels=np.concatenate([real.labels, synthetic.labels[sel]]),
        window=real.window, stride=real.stride)


# ----------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------
def save_dataset(dataset: EncodedDataset, path) -> None:
    meta = {
        "class_names": dataset.class_names,
        "feature_names": dataset.feature_names,
        "feature_kinds": dataset.feature_kinds,
        "encoders": dataset.encoders,
        "imputation": dataset.imputation,
        "clamp_eval": dataset.clamp_eval,
        "has_scaler": dataset.scaler_min is not None,
    }
    arrays = {"X": dataset.X, "y": dataset.y,
              "meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(),
                                    dtype=np.uint8)}
    if dataset.scaler_min is not None:
        arrays["scaler_min"] = dataset.scaler_min
        arrays["scaler_max"] = dataset.scaler_max
        arrays["degenerate"] = dataset.degenerate
    np.savez(path, **arrays)


def load_dataset(path) -> EncodedDataset:
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"].tobytes()).decode())
        ds = EncodedDataset(
            X=z["X"], y=z["y"], class_names=meta["class_names"],
            feature_names=meta["feature_names"],
            feature_kinds=meta["feature_kinds"],
            encoders=meta["encoders"], imputation=meta["imputation"],
            clamp_eval=meta["clamp_eval"])
        if meta["has_scaler"]:
            ds.scaler_min = z["scaler_min"]
            ds.scaler_max = z["scaler_max"]
            ds.degenerate = z["degenerate"]
    return ds
