"""Kernel-induced dissimilarity, kernel nearest-neighbour rule and rank margins.

Dissimilarity is ``K(x,x) + K(x',x') - 2 K(x,x')``. It may be negative for
non-PSD kernels; only the ordering it induces is used. Neighbour lists are
ordered by dissimilarity, ties by ascending source index, and an example
never counts as its own neighbour (matching source index).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .kernel_expr import KernelExpr, PairBatch


@dataclass(frozen=True)
class LabeledExample:
    features: tuple[float, ...]
    label: int
    source_index: int


class Examples(NamedTuple):
    """Column view of a list of labelled examples."""

    X: np.ndarray
    y: np.ndarray
    index: np.ndarray

    @classmethod
    def of(cls, examples: Sequence[LabeledExample]) -> "Examples":
        return cls(
            np.array([e.features for e in examples], dtype=float).reshape(len(examples), -1),
            np.array([e.label for e in examples], dtype=int),
            np.array([e.source_index for e in examples], dtype=int),
        )

    def __len__(self) -> int:
        return len(self.y)


@dataclass(frozen=True)
class MarginRecord:
    p_rank: int
    n_rank: int

    @property
    def delta(self) -> int:
        return self.n_rank - self.p_rank


def _as_examples(examples) -> Examples:
    if isinstance(examples, Examples):
        return examples
    return Examples.of(list(examples))


def dissimilarity_sq(K: KernelExpr, x, x2) -> float:
    x = np.asarray(x, dtype=float)[None, :]
    x2 = np.asarray(x2, dtype=float)[None, :]
    k11 = PairBatch.diagonal(x).evaluate(K)[0]
    k22 = PairBatch.diagonal(x2).evaluate(K)[0]
    k12 = PairBatch(x, x2).evaluate(K)[0]
    return float(k11 + k22 - 2.0 * k12)


class KernelGrid:
    """All (query, prototype) pairs for a fixed query set and prototype set.

    Build once, then score any number of kernels; terminal values are shared.
    ``pair_evaluations`` counts query-prototype kernel evaluations and
    ``self_evaluations`` the K(x, x) terms.
    """

    def __init__(self, prototypes, queries):
        self.prototypes = _as_examples(prototypes)
        self.queries = _as_examples(queries)
        # canonical column order: ascending source index
        self._col_order = np.argsort(self.prototypes.index, kind="stable")
        protos = Examples(*(a[self._col_order] for a in self.prototypes))
        self._protos = protos
        self._cross = PairBatch.cross(self.queries.X, protos.X)
        self._diag_q = PairBatch.diagonal(self.queries.X)
        self._diag_p = PairBatch.diagonal(protos.X)
        self._excluded = self.queries.index[:, None] == protos.index[None, :]

    @property
    def pair_evaluations(self) -> int:
        return self._cross.evaluations

    @property
    def self_evaluations(self) -> int:
        return self._diag_q.evaluations + self._diag_p.evaluations

    def dissimilarities(self, K: KernelExpr) -> np.ndarray:
        """(queries x prototypes) matrix, prototypes in source-index order."""
        kq = self._diag_q.evaluate(K)
        kp = self._diag_p.evaluate(K)
        kx = self._cross.evaluate(K).reshape(len(self.queries), len(self._protos))
        return (kq[:, None] + kp[None, :]) - 2.0 * kx

    def neighbour_order(self, K: KernelExpr):
        """Sorted prototype positions per query and the matching validity mask."""
        dist = self.dissimilarities(K)
        dist = np.where(self._excluded, np.inf, dist)
        order = np.argsort(dist, axis=1, kind="stable")
        valid = ~np.take_along_axis(self._excluded, order, axis=1)
        return order, valid

    def ranks(self, K: KernelExpr) -> tuple[np.ndarray, np.ndarray]:
        """1-based nearest same-class / other-class ranks per query.

        Missing classes get the sentinel ``len(prototypes) + 1``.
        """
        order, valid = self.neighbour_order(K)
        labels = self._protos.y[order]
        same = labels == self.queries.y[:, None]
        sentinel = len(self._protos) + 1
        return (_first_rank(same & valid, sentinel),
                _first_rank(~same & valid, sentinel))

    def fitness(self, K: KernelExpr) -> float:
        p, n = self.ranks(K)
        return float(np.mean(n - p)) - len(self._protos)

    def classify(self, K: KernelExpr, k: int = 1) -> np.ndarray:
        order, valid = self.neighbour_order(K)
        labels = self._protos.y[order]
        if k == 1:
            nearest = np.argmax(valid, axis=1)
            out = labels[np.arange(len(labels)), nearest]
            return np.where(valid.any(axis=1), out, -1)
        out = np.empty(len(self.queries), dtype=int)
        for q in range(len(self.queries)):
            out[q] = majority_vote(labels[q][valid[q]][:k])
        return out


def _first_rank(hits: np.ndarray, sentinel: int) -> np.ndarray:
    found = hits.any(axis=1)
    return np.where(found, np.argmax(hits, axis=1) + 1, sentinel)


def majority_vote(neighbour_labels: np.ndarray) -> int:
    """Majority label; ties go to the tied class met first in neighbour order."""
    if len(neighbour_labels) == 0:
        return -1
    values, counts = np.unique(neighbour_labels, return_counts=True)
    top = set(values[counts == counts.max()].tolist())
    for label in neighbour_labels:
        if label in top:
            return int(label)
    raise AssertionError("unreachable")


def margin(K: KernelExpr, prototypes, e: LabeledExample) -> MarginRecord:
    grid = KernelGrid(prototypes, [e])
    p, n = grid.ranks(K)
    return MarginRecord(int(p[0]), int(n[0]))


def fitness(K: KernelExpr, prototypes, cases) -> float:
    """Mean rank margin over the cases, minus the prototype count."""
    prototypes = _as_examples(prototypes)
    cases = _as_examples(cases)
    if len(prototypes) < 2 or len(cases) < 1:
        raise ValueError("fitness needs at least 2 prototypes and 1 case")
    return KernelGrid(prototypes, cases).fitness(K)


def classify_nn(K: KernelExpr, prototypes, x, k: int = 1,
                source_index: int = -1) -> int:
    query = Examples(np.asarray(x, dtype=float)[None, :], np.array([-1]),
                     np.array([source_index]))
    return int(KernelGrid(prototypes, query).classify(K, k)[0])


def predict(K: KernelExpr, prototypes, X, k: int = 1) -> np.ndarray:
    """Labels for unseen points (no self-exclusion applies)."""
    X = np.asarray(X, dtype=float)
    query = Examples(X, np.full(len(X), -1), np.full(len(X), -1))
    return KernelGrid(prototypes, query).classify(K, k)


def error_rate(K: KernelExpr, prototypes, eval_set, k: int = 1) -> float:
    eval_set = _as_examples(eval_set)
    if len(eval_set) == 0:
        raise ValueError("empty evaluation set")
    predicted = KernelGrid(prototypes, eval_set).classify(K, k)
    return float(np.mean(predicted != eval_set.y))
