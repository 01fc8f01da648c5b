"""Datasets: CSV loading, min-max scaling and stratified k-fold plans."""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .margin_fitness import Examples


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    name: str
    X: np.ndarray
    y: np.ndarray
    label_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise DataError("X must be (n, d) with one label per row")

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.label_names) if self.label_names else int(self.y.max()) + 1

    def __len__(self) -> int:
        return len(self.y)

    def class_counts(self) -> dict[int, int]:
        labels, counts = np.unique(self.y, return_counts=True)
        return dict(zip(labels.tolist(), counts.tolist()))

    def examples(self, indices: Sequence[int] | None = None) -> Examples:
        if indices is None:
            indices = np.arange(len(self))
        indices = np.asarray(indices, dtype=int)
        return Examples(self.X[indices], self.y[indices], indices)

    def subset(self, indices: Sequence[int], name: str | None = None) -> "Dataset":
        """New dataset of the given rows (re-indexed from 0)."""
        indices = np.asarray(indices, dtype=int)
        return Dataset(name or self.name, self.X[indices], self.y[indices], self.label_names)

    def with_features(self, X: np.ndarray) -> "Dataset":
        return Dataset(self.name, X, self.y, self.label_names)


def load_csv(path, label_column: str = "last", header: bool = True,
             name: str | None = None) -> Dataset:
    """Read a numeric CSV with one label column (``"first"`` or ``"last"``).

    Labels map to contiguous ids in order of first appearance; the original
    label strings are kept in ``label_names``.
    """
    path = Path(path)
    if label_column not in ("first", "last"):
        raise DataError(f"label_column must be 'first' or 'last', got {label_column!r}")
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    if header:
        rows = rows[1:]
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(rows[0])
    if width < 2:
        raise DataError(f"{path}: need at least one feature and a label column")
    first_line = 2 if header else 1
    ids: dict[str, int] = {}
    features, labels = [], []
    for r, row in enumerate(rows):
        line = r + first_line
        if len(row) != width:
            raise DataError(f"{path}: row {line} has {len(row)} cells, expected {width}")
        cells = [c.strip() for c in row]
        label = cells[0] if label_column == "first" else cells[-1]
        values = cells[1:] if label_column == "first" else cells[:-1]
        parsed = []
        for c, cell in enumerate(values):
            try:
                parsed.append(float(cell))
            except ValueError:
                col = c + 2 if label_column == "first" else c + 1
                raise DataError(
                    f"{path}: non-numeric value {cell!r} at row {line}, column {col}") from None
        features.append(parsed)
        labels.append(ids.setdefault(label, len(ids)))
    if len(ids) < 2:
        raise DataError(f"{path}: need at least 2 classes, found {len(ids)}")
    X = np.array(features, dtype=float)
    if not np.all(np.isfinite(X)):
        raise DataError(f"{path}: non-finite feature values")
    return Dataset(name or path.stem, X, np.array(labels, dtype=int), tuple(ids))


@dataclass(frozen=True)
class ScalingParams:
    minimum: np.ndarray
    maximum: np.ndarray

    def to_dict(self) -> dict:
        return {"min": self.minimum.tolist(), "max": self.maximum.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "ScalingParams":
        return cls(np.array(data["min"], dtype=float), np.array(data["max"], dtype=float))


def scale_fit(X: np.ndarray) -> ScalingParams:
    X = np.asarray(X, dtype=float)
    if len(X) == 0:
        raise DataError("cannot fit scaling on an empty set")
    return ScalingParams(X.min(axis=0), X.max(axis=0))


def scale_apply(params: ScalingParams, X: np.ndarray) -> np.ndarray:
    """Map each feature to ``(f - min) / (max - min)``; constant features map to 0."""
    X = np.asarray(X, dtype=float)
    span = params.maximum - params.minimum
    constant = span == 0
    out = (X - params.minimum) / np.where(constant, 1.0, span)
    out[:, constant] = 0.0
    return out


def largest_remainder(total: int, weights: Sequence[float]) -> list[int]:
    """Split ``total`` proportionally to ``weights`` into integers.

    Floors first, then one extra unit to the largest remainders; equal
    remainders favour the earlier position.
    """
    weights = [float(w) for w in weights]
    mass = sum(weights)
    if total < 0 or mass <= 0:
        raise ValueError("need total >= 0 and positive weights")
    quotas = [total * w / mass for w in weights]
    counts = [int(np.floor(q)) for q in quotas]
    short = total - sum(counts)
    by_remainder = sorted(range(len(weights)), key=lambda k: (-(quotas[k] - counts[k]), k))
    for k in by_remainder[:short]:
        counts[k] += 1
    return counts


@dataclass
class FoldPlan:
    test_folds: list[np.ndarray]
    n: int = field(default=0)

    @property
    def k(self) -> int:
        return len(self.test_folds)

    def train(self, fold: int) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[self.test_folds[fold]] = False
        return np.flatnonzero(mask)

    def test(self, fold: int) -> np.ndarray:
        return self.test_folds[fold]


def stratified_folds(y: np.ndarray, k: int, rng: random.Random) -> FoldPlan:
    """Deal each shuffled class round-robin over ``k`` folds.

    The deal continues across classes, so fold sizes differ by at most one
    and each class is split within one example of ``n_c / k`` per fold.
    """
    y = np.asarray(y)
    if k < 2:
        raise DataError(f"need k >= 2 folds, got {k}")
    labels, counts = np.unique(y, return_counts=True)
    small = labels[counts < k]
    if len(small):
        raise DataError(f"classes {small.tolist()} have fewer than {k} members")
    folds: list[list[int]] = [[] for _ in range(k)]
    slot = 0
    for label in labels:
        members = np.flatnonzero(y == label).tolist()
        rng.shuffle(members)
        for idx in members:
            folds[slot].append(idx)
            slot = (slot + 1) % k
    return FoldPlan([np.array(sorted(f), dtype=int) for f in folds], len(y))
