"""CSV ingestion, min-max normalization, k-fold splits and stored-vector choice."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd

RANGES_MAGIC = "mpkm-ranges"
RANGES_VERSION = 1


@dataclass(frozen=True)
class Dataset:
    """Features (M, d) with binary labels; ``ranges`` is None until normalized."""

    features: np.ndarray
    labels: np.ndarray
    columns: tuple = ()
    ranges: tuple | None = None

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError("dataset needs at least one row of features")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("one label per row required")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dims(self) -> int:
        return self.features.shape[1]

    @property
    def label_pairs(self):
        """(y+, y-) one-hot columns."""
        return self.labels.astype(np.int64), 1 - self.labels.astype(np.int64)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return replace(self, features=self.features[idx], labels=self.labels[idx])


def _label_values(series: pd.Series) -> np.ndarray:
    raw = series.to_numpy()
    values = pd.to_numeric(series, errors="coerce")
    bad = values.isna() & series.notna()
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise ValueError(f"row {row + 2}: non-numeric label {raw[row]!r}")
    uniq = set(values.unique().tolist())
    if uniq <= {0, 1}:
        return values.to_numpy().astype(np.int64)
    if uniq <= {-1, 1}:
        return (values.to_numpy() > 0).astype(np.int64)
    raise ValueError(f"labels must be binary (0/1 or -1/1), found {sorted(uniq)}")


def load_csv(path, label_column=-1, ignore_columns=()) -> Dataset:
    """Read a headered CSV with numeric features and a binary label.

    ``label_column`` is a column name or a (possibly negative) index.
    Row numbers in error messages are 1-based file lines (header = line 1).
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, skipinitialspace=True)
    except pd.errors.ParserError as exc:
        raise ValueError(f"{path}: malformed CSV: {exc}") from None
    except pd.errors.EmptyDataError:
        raise ValueError(f"{path}: empty file") from None
    if frame.empty:
        raise ValueError(f"{path}: no data rows")
    cols = list(frame.columns)
    if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
        if label_column not in cols:
            raise ValueError(f"{path}: no label column {label_column!r} (have {cols})")
        label_name = label_column
    else:
        i = int(label_column)
        if not -len(cols) <= i < len(cols):
            raise ValueError(f"{path}: label column index {i} out of range")
        label_name = cols[i]
    missing = [c for c in ignore_columns if c not in cols]
    if missing:
        raise ValueError(f"{path}: unknown ignored columns {missing}")
    feat_cols = [c for c in cols if c != label_name and c not in set(ignore_columns)]
    if not feat_cols:
        raise ValueError(f"{path}: no feature columns left")

    block = frame[feat_cols + [label_name]]
    na_rows = np.flatnonzero(block.isna().any(axis=1).to_numpy())
    if na_rows.size:
        raise ValueError(f"{path}: row {int(na_rows[0]) + 2}: missing value")
    feats = block[feat_cols].apply(pd.to_numeric, errors="coerce")
    bad_rows = np.flatnonzero(feats.isna().any(axis=1).to_numpy())
    if bad_rows.size:
        raise ValueError(f"{path}: row {int(bad_rows[0]) + 2}: non-numeric feature")
    try:
        labels = _label_values(block[label_name])
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    return Dataset(feats.to_numpy(dtype=np.float64), labels, tuple(feat_cols))


def fit_ranges(features):
    features = np.asarray(features, dtype=np.float64)
    return features.min(axis=0), features.max(axis=0)


def apply_ranges(features, ranges):
    """Map each column from [lo, hi] onto [-1, 1]; constant columns go to 0.

    Values outside the training range (inference on new data) are clipped.
    """
    lo, hi = (np.asarray(r, dtype=np.float64) for r in ranges)
    features = np.asarray(features, dtype=np.float64)
    if features.shape[-1] != lo.shape[0]:
        raise ValueError(f"expected {lo.shape[0]} features, got {features.shape[-1]}")
    span = hi - lo
    const = span <= 0
    scaled = 2.0 * (features - lo) / np.where(const, 1.0, span) - 1.0
    scaled = np.where(const, 0.0, scaled)
    return np.clip(scaled, -1.0, 1.0)


def normalize(ds: Dataset, ranges=None) -> Dataset:
    """Min-max to [-1, 1], fitting ranges unless given."""
    if ranges is None:
        ranges = fit_ranges(ds.features)
    return replace(ds, features=apply_ranges(ds.features, ranges), ranges=ranges)


def save_ranges(path, ranges):
    lo, hi = ranges
    lines = [f"{RANGES_MAGIC} {RANGES_VERSION}",
             "min " + " ".join(repr(float(v)) for v in lo),
             "max " + " ".join(repr(float(v)) for v in hi)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_ranges(path):
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].split()[:1] != [RANGES_MAGIC]:
        raise ValueError(f"{path}: not a ranges file")
    if int(lines[0].split()[1]) != RANGES_VERSION:
        raise ValueError(f"{path}: unsupported ranges version")
    rows = dict(line.split(" ", 1) for line in lines[1:] if line.strip())
    lo = np.array(rows["min"].split(), dtype=np.float64)
    hi = np.array(rows["max"].split(), dtype=np.float64)
    return lo, hi


def truncate(ds: Dataset, rows: int, seed: int = 0) -> Dataset:
    """Seeded random subset of ``rows`` samples (all rows if fewer)."""
    if rows < 1:
        raise ValueError("truncate needs rows >= 1")
    if len(ds) <= rows:
        return ds
    idx = np.sort(np.random.default_rng(seed).choice(len(ds), rows, replace=False))
    return ds.subset(idx)


@dataclass(frozen=True)
class FoldSpec:
    k: int
    seed: int
    folds: tuple  # of (train_idx, test_idx)

    def __iter__(self):
        return iter(self.folds)

    def __len__(self):
        return len(self.folds)


def kfold(n: int, k: int, seed: int = 0) -> FoldSpec:
    """Shuffled k-fold split of ``range(n)``.

    ``k = 1`` cannot hold anything out; it trains and tests on everything
    and warns.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} folds need at least {k} samples, have {n}")
    perm = np.random.default_rng(seed).permutation(n)
    if k == 1:
        warnings.warn("k=1: training and testing on the same samples", stacklevel=2)
        return FoldSpec(1, seed, ((np.sort(perm), np.sort(perm)),))
    parts = np.array_split(perm, k)
    folds = []
    for i in range(k):
        test = np.sort(parts[i])
        train = np.sort(np.concatenate([parts[j] for j in range(k) if j != i]))
        folds.append((train, test))
    return FoldSpec(k, seed, tuple(folds))


def select_stored(features, count: int, policy: str = "head", seed: int = 0):
    """Row indices of the stored vectors within ``features``."""
    n = np.shape(features)[0]
    if count < 1:
        raise ValueError("stored count must be >= 1")
    if count > n:
        raise ValueError(f"stored count {count} exceeds training-set size {n}")
    if policy == "head":
        return np.arange(count)
    if policy == "random":
        return np.sort(np.random.default_rng(seed).choice(n, count, replace=False))
    raise ValueError(f"unknown stored-vector policy {policy!r}")


__all__ = [
    "Dataset", "load_csv", "fit_ranges", "apply_ranges", "normalize", "save_ranges",
    "load_ranges", "truncate", "FoldSpec", "kfold", "select_stored",
]
