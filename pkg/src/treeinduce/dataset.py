"""Delimited-file ingestion, near-zero-variance filtering, standardization and
train/test splitting.

Standardization statistics always come from the training rows: ``preprocess``
standardizes over every row it sees, and ``split`` refits the statistics on
the training partition and re-applies them to both partitions.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

logger = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "na", "nan", "null", "none", "?"})

DEFAULT_FREQ_RATIO = 95 / 5
DEFAULT_UNIQUE_PCT = 10.0


class DatasetError(ValueError):
    """Base class for ingestion and preprocessing failures."""


class ParseError(DatasetError):
    pass


class MissingLabel(DatasetError):
    pass


class NonNumeric(DatasetError):
    pass


class AllColumnsRemoved(DatasetError):
    pass


class DegenerateSplit(DatasetError):
    pass


class EmptyPartition(DatasetError):
    pass


@dataclass(frozen=True)
class RawTable:
    names: tuple[str, ...]
    columns: np.ndarray  # (n_rows, p) float64
    labels: tuple[str, ...]

    def __post_init__(self):
        if self.columns.ndim != 2 or self.columns.shape[1] != len(self.names):
            raise DatasetError("feature matrix does not match column names")
        if self.columns.shape[0] != len(self.labels):
            raise DatasetError("feature and label lengths differ")
        if self.n_rows < 2:
            raise DatasetError(f"need at least 2 rows, got {self.n_rows}")
        if len(set(self.labels)) < 2:
            raise DatasetError("label column must contain at least 2 distinct classes")
        self.columns.setflags(write=False)

    @property
    def n_rows(self) -> int:
        return self.columns.shape[0]

    @property
    def p(self) -> int:
        return self.columns.shape[1]

    @property
    def classes(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.labels)))


def _is_missing(token: str) -> bool:
    return token.strip().lower() in MISSING_TOKENS


def load_table(path, label_column: str, delimiter: str = ",") -> RawTable:
    """Read a headed, delimited UTF-8 file into a ``RawTable``.

    Rows holding any missing value are dropped (and counted in the log).
    Every column other than ``label_column`` must parse as a number.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise MissingLabel(f"{path}: label column {label_column!r} not in header {header}")
        label_idx = header.index(label_column)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            rows.append(row)

    feat_idx = [i for i in range(len(header)) if i != label_idx]
    names = tuple(header[i] for i in feat_idx)
    kept = [r for r in rows if not any(_is_missing(c) for c in r)]
    if len(kept) < len(rows):
        logger.info("%s: dropped %d rows with missing values", path, len(rows) - len(kept))

    values = np.empty((len(kept), len(feat_idx)), dtype=np.float64)
    for j, i in enumerate(feat_idx):
        for r, row in enumerate(kept):
            try:
                values[r, j] = float(row[i])
            except ValueError:
                raise NonNumeric(
                    f"{path}: column {header[i]!r} is not numeric (value {row[i]!r})"
                ) from None
    if not np.all(np.isfinite(values)):
        raise NonNumeric(f"{path}: non-finite feature values")
    labels = tuple(row[label_idx].strip() for row in kept)
    return RawTable(names=names, columns=values, labels=labels)


@dataclass(frozen=True)
class PreprocessStats:
    """Column filtering decisions plus the standardization that was applied."""

    retained: tuple[str, ...]
    mean: tuple[float, ...]
    std: tuple[float, ...]
    removed: tuple[tuple[str, str], ...] = ()  # (column, reason)

    def __post_init__(self):
        if not (len(self.retained) == len(self.mean) == len(self.std)):
            raise DatasetError("inconsistent statistics lengths")
        if any(s <= 0 for s in self.std):
            raise DatasetError("retained column with nonpositive stddev")
        if set(self.retained) & {name for name, _ in self.removed}:
            raise DatasetError("column both retained and removed")

    def transform(self, names: Sequence[str], columns: np.ndarray) -> np.ndarray:
        index = {n: i for i, n in enumerate(names)}
        missing = [n for n in self.retained if n not in index]
        if missing:
            raise DatasetError(f"columns missing from table: {missing}")
        X = columns[:, [index[n] for n in self.retained]]
        return (X - np.asarray(self.mean)) / np.asarray(self.std)

    def to_dict(self) -> dict:
        return {
            "retained": list(self.retained),
            "mean": list(self.mean),
            "std": list(self.std),
            "removed": [{"column": c, "reason": r} for c, r in self.removed],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PreprocessStats":
        return cls(
            retained=tuple(doc["retained"]),
            mean=tuple(float(v) for v in doc["mean"]),
            std=tuple(float(v) for v in doc["std"]),
            removed=tuple((d["column"], d["reason"]) for d in doc["removed"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


class Partition(NamedTuple):
    X: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)


@dataclass(frozen=True)
class DatasetView:
    features: np.ndarray  # standardized, (n, p)
    labels: np.ndarray  # int class indices
    classes: tuple[str, ...]
    stats: PreprocessStats
    retained_raw: np.ndarray = field(repr=False)  # retained columns before scaling
    train_mask: np.ndarray | None = None
    seed: int | None = None
    test_partition: Partition | None = field(default=None, repr=False)

    def __post_init__(self):
        for arr in (self.features, self.labels, self.retained_raw, self.train_mask):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def class_count(self) -> int:
        return len(self.classes)

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    def train(self) -> Partition:
        if self.train_mask is None:
            return Partition(self.features, self.labels)
        return Partition(self.features[self.train_mask], self.labels[self.train_mask])

    def test(self) -> Partition:
        if self.test_partition is not None:
            return self.test_partition
        if self.train_mask is None:
            raise EmptyPartition("view has not been split")
        return Partition(self.features[~self.train_mask], self.labels[~self.train_mask])


def near_zero_variance(
    values: np.ndarray,
    freq_ratio: float = DEFAULT_FREQ_RATIO,
    unique_pct: float = DEFAULT_UNIQUE_PCT,
) -> str | None:
    """Return the removal reason for a column, or None if it is kept."""
    counts = sorted(Counter(values.tolist()).values(), reverse=True)
    if len(counts) == 1:
        return "zero variance"
    ratio = counts[0] / counts[1]
    pct_unique = 100.0 * len(counts) / len(values)
    if ratio >= freq_ratio and pct_unique <= unique_pct:
        return f"near-zero variance (freq ratio {ratio:.3g}, {pct_unique:.3g}% unique)"
    return None


def _fit_scale(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    std = (X - mean).std(axis=0)
    return mean, std


def encode_labels(labels: Sequence[str], classes: Sequence[str]) -> np.ndarray:
    index = {c: i for i, c in enumerate(classes)}
    unknown = sorted(set(labels) - set(index))
    if unknown:
        raise DatasetError(f"labels not seen in training data: {unknown}")
    return np.array([index[lab] for lab in labels], dtype=np.int64)


def preprocess(
    raw: RawTable,
    nzv_freq_ratio: float = DEFAULT_FREQ_RATIO,
    nzv_unique_pct: float = DEFAULT_UNIQUE_PCT,
) -> tuple[DatasetView, PreprocessStats]:
    """Drop near-zero-variance columns, then center and scale the rest."""
    removed = []
    keep = []
    for j, name in enumerate(raw.names):
        reason = near_zero_variance(raw.columns[:, j], nzv_freq_ratio, nzv_unique_pct)
        if reason is None:
            keep.append(j)
        else:
            removed.append((name, reason))
            logger.info("removing column %r: %s", name, reason)
    if not keep:
        raise AllColumnsRemoved("no feature columns survive near-zero-variance filtering")

    kept = raw.columns[:, keep].copy()
    mean, std = _fit_scale(kept)
    stats = PreprocessStats(
        retained=tuple(raw.names[j] for j in keep),
        mean=tuple(mean.tolist()),
        std=tuple(std.tolist()),
        removed=tuple(removed),
    )
    classes = raw.classes
    view = DatasetView(
        features=(kept - mean) / std,
        labels=encode_labels(raw.labels, classes),
        classes=classes,
        stats=stats,
        retained_raw=kept,
    )
    return view, stats


def _restandardize(view: DatasetView, train_mask: np.ndarray) -> tuple[np.ndarray, np.ndarray, PreprocessStats]:
    raw = view.retained_raw
    mean, std = _fit_scale(raw[train_mask])
    ok = std > 0
    removed = list(view.stats.removed)
    for name, good in zip(view.stats.retained, ok):
        if not good:
            removed.append((name, "zero variance in training partition"))
    if not ok.any():
        raise AllColumnsRemoved("no feature has variance in the training partition")
    raw = raw[:, ok]
    stats = PreprocessStats(
        retained=tuple(n for n, good in zip(view.stats.retained, ok) if good),
        mean=tuple(mean[ok].tolist()),
        std=tuple(std[ok].tolist()),
        removed=tuple(removed),
    )
    return (raw - mean[ok]) / std[ok], raw, stats


def split(view: DatasetView, train_fraction: float = 0.7, seed: int = 0) -> DatasetView:
    """Random permutation cut at floor(n * train_fraction); rescales on train rows.

    Raises ``DegenerateSplit`` when the test side is empty or fewer than two
    rows land in training.
    """
    if not 0 < train_fraction < 1:
        raise DegenerateSplit(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = view.n_rows
    n_train = int(np.floor(n * train_fraction))
    # a single training row has no spread to standardize with
    if n_train < 2 or n_train == n:
        raise DegenerateSplit(
            f"split of {n} rows at {train_fraction} gives {n_train} train / {n - n_train} test rows"
        )
    order = np.random.default_rng(seed).permutation(n)
    mask = np.zeros(n, dtype=bool)
    mask[order[:n_train]] = True
    features, raw, stats = _restandardize(view, mask)
    return replace(
        view,
        features=features,
        retained_raw=raw,
        stats=stats,
        train_mask=mask,
        seed=seed,
        test_partition=None,
    )


def with_test_table(view: DatasetView, test: RawTable) -> DatasetView:
    """Attach a predefined test table, transformed with the training statistics.

    ``view`` is the preprocessed training file; every row becomes a training
    row and no split is performed.
    """
    mask = np.ones(view.n_rows, dtype=bool)
    features, raw, stats = _restandardize(view, mask)
    X_test = stats.transform(test.names, test.columns)
    y_test = encode_labels(test.labels, view.classes)
    X_test.setflags(write=False)
    y_test.setflags(write=False)
    return replace(
        view,
        features=features,
        retained_raw=raw,
        stats=stats,
        train_mask=mask,
        test_partition=Partition(X_test, y_test),
    )


def load_dataset(
    path,
    label_column: str,
    *,
    delimiter: str = ",",
    test_path=None,
    train_fraction: float = 0.7,
    seed: int = 0,
    nzv_freq_ratio: float = DEFAULT_FREQ_RATIO,
    nzv_unique_pct: float = DEFAULT_UNIQUE_PCT,
) -> DatasetView:
    """Load, preprocess and split (or attach ``test_path``) in one call."""
    raw = load_table(path, label_column, delimiter)
    view, _ = preprocess(raw, nzv_freq_ratio, nzv_unique_pct)
    if test_path is not None:
        return with_test_table(view, load_table(test_path, label_column, delimiter))
    return split(view, train_fraction, seed)
