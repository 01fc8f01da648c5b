"""Three-species co-evolution of kernels, prototype subsets and fitness cases.

Per generation the kernel population is varied and scored against the
current prototype and fitness-case subsets. The best kernel then drives two
(1, lambda) strategies over training-set subsets: prototypes cooperate
(offspring maximizing the kernel's fitness win) and fitness cases compete
(offspring minimizing it win). The final model is the per-generation best
kernel, with its prototypes, that has the lowest 1-NN training error.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data_io import Dataset, largest_remainder
from .gp_engine import GpConfig, Individual, init_population, next_generation
from .kernel_expr import KernelExpr
from .margin_fitness import KernelGrid

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class IndexSubset:
    indices: tuple[int, ...]
    class_counts: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.indices)

    @classmethod
    def of(cls, indices: Sequence[int], y: np.ndarray) -> "IndexSubset":
        indices = tuple(int(i) for i in indices)
        n_classes = int(y.max()) + 1
        counts = np.bincount(y[list(indices)], minlength=n_classes) if indices else \
            np.zeros(n_classes, dtype=int)
        return cls(indices, tuple(int(c) for c in counts))


def _class_members(y: np.ndarray) -> list[list[int]]:
    return [np.flatnonzero(y == c).tolist() for c in range(int(y.max()) + 1)]


def stratified_sample(y: np.ndarray, size: int, rng: random.Random) -> IndexSubset:
    """Distinct indices whose class counts follow ``y`` by largest remainder."""
    y = np.asarray(y)
    if not 0 <= size <= len(y):
        raise ValueError(f"sample size {size} outside [0, {len(y)}]")
    members = _class_members(y)
    quotas = largest_remainder(size, [len(m) for m in members])
    chosen: list[int] = []
    for pool, quota in zip(members, quotas):
        chosen.extend(rng.sample(pool, quota))
    return IndexSubset.of(chosen, y)


def replacement_count(rate: float, size: int) -> int:
    # round() is round-half-to-even
    return round(rate * size)


def mutate_subset(parent: IndexSubset, rate: float, y: np.ndarray,
                  rng: random.Random) -> IndexSubset:
    """Replace ``round(rate * size)`` members, class by class.

    Fresh members come from outside the parent; the removed ones are only
    reused when a class has no other candidates left.
    """
    if not 0 < rate <= 1:
        raise ValueError(f"replacement rate must lie in (0, 1], got {rate}")
    y = np.asarray(y)
    n_replace = replacement_count(rate, len(parent))
    if n_replace == 0:
        return IndexSubset(parent.indices, parent.class_counts)
    positions_by_class: list[list[int]] = [[] for _ in parent.class_counts]
    for pos, idx in enumerate(parent.indices):
        positions_by_class[y[idx]].append(pos)
    quotas = largest_remainder(n_replace, parent.class_counts)
    in_parent = set(parent.indices)
    indices = list(parent.indices)
    for label, (positions, quota) in enumerate(zip(positions_by_class, quotas)):
        if quota == 0:
            continue
        removed_pos = rng.sample(positions, quota)
        removed = [parent.indices[p] for p in removed_pos]
        pool = [i for i in np.flatnonzero(y == label).tolist() if i not in in_parent]
        if len(pool) < quota:
            pool += removed
        fresh = rng.sample(pool, quota)
        for p, idx in zip(removed_pos, fresh):
            indices[p] = idx
    return IndexSubset(tuple(indices), parent.class_counts)


@dataclass
class CoevoConfig:
    prototypes: int = 50
    cases: int = 100
    prototype_offspring: int = 4
    case_offspring: int = 2
    prototype_rate: float = 0.25
    case_rate: float = 0.50
    gp: GpConfig = field(default_factory=GpConfig)

    def __post_init__(self):
        for name in ("prototype_rate", "case_rate"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {value}")
        if self.prototypes < 2 or self.cases < 1:
            raise ValueError("need at least 2 prototypes and 1 fitness case")
        if self.prototype_offspring < 1 or self.case_offspring < 1:
            raise ValueError("offspring counts must be >= 1")


@dataclass
class GenerationRecord:
    t: int
    kernel: KernelExpr
    fitness: float
    prototypes: IndexSubset
    cases: IndexSubset
    train_error: float
    fitness_pair_evaluations: int = 0
    error_pair_evaluations: int = 0

    @property
    def kernel_size(self) -> int:
        return self.kernel.size


@dataclass
class EvolutionTrace:
    records: list[GenerationRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, t: int) -> GenerationRecord:
        return self.records[t]


def best_individual(population: Sequence[Individual]) -> Individual:
    """Highest fitness, then smallest size, then lowest position."""
    best = population[0]
    for ind in population[1:]:
        if (ind.fitness, -ind.size) > (best.fitness, -best.size):
            best = ind
    return best


def _error(kernel: KernelExpr, train: Dataset, prototypes: IndexSubset) -> tuple[float, int]:
    grid = KernelGrid(train.examples(prototypes.indices), train.examples())
    predicted = grid.classify(kernel, 1)
    return float(np.mean(predicted != train.y)), grid.pair_evaluations


def coevolve(train: Dataset, config: CoevoConfig, rng: random.Random,
             on_generation: Callable[[GenerationRecord], None] | None = None) -> EvolutionTrace:
    if len(np.unique(train.y)) < 2:
        raise ValueError("training set needs at least two classes")
    if config.prototypes > len(train) or config.cases > len(train):
        raise ValueError(
            f"subset sizes ({config.prototypes}, {config.cases}) exceed training set size {len(train)}")
    gp = config.gp
    y = train.y

    protos = stratified_sample(y, config.prototypes, rng)
    cases = stratified_sample(y, config.cases, rng)
    population = init_population(gp, train.d, rng)
    trace = EvolutionTrace()

    def evaluate(pop):
        grid = KernelGrid(train.examples(protos.indices), train.examples(cases.indices))
        for ind in pop:
            ind.fitness = grid.fitness(ind.expr)
        return grid.pair_evaluations

    def record(t, champion, evaluations):
        error, error_evals = _error(champion.expr, train, protos)
        rec = GenerationRecord(t, champion.expr, champion.fitness, protos, cases, error,
                               evaluations, error_evals)
        trace.records.append(rec)
        log.info("t=%d F=%.4f size=%d train_error=%.4f",
                 t, rec.fitness, rec.kernel_size, rec.train_error)
        if on_generation is not None:
            on_generation(rec)

    evaluations = evaluate(population)
    record(0, best_individual(population), evaluations)

    for t in range(1, gp.generations + 1):
        population = next_generation(population, gp, train.d, rng)
        evaluations = evaluate(population)
        champion = best_individual(population)

        # cooperative prototypes: keep the offspring maximizing fitness
        case_set = train.examples(cases.indices)
        best_score, best_protos = None, None
        for _ in range(config.prototype_offspring):
            child = mutate_subset(protos, config.prototype_rate, y, rng)
            grid = KernelGrid(train.examples(child.indices), case_set)
            score = grid.fitness(champion.expr)
            evaluations += grid.pair_evaluations
            if best_score is None or score > best_score:
                best_score, best_protos = score, child
        protos = best_protos

        # competitive fitness cases: keep the offspring minimizing fitness
        proto_set = train.examples(protos.indices)
        best_score, best_cases = None, None
        for _ in range(config.case_offspring):
            child = mutate_subset(cases, config.case_rate, y, rng)
            grid = KernelGrid(proto_set, train.examples(child.indices))
            score = grid.fitness(champion.expr)
            evaluations += grid.pair_evaluations
            if best_score is None or score < best_score:
                best_score, best_cases = score, child
        cases = best_cases

        record(t, champion, evaluations)
    return trace


def select_final(trace: EvolutionTrace) -> GenerationRecord:
    """Lowest training error, then smallest kernel, then earliest generation."""
    if not trace.records:
        raise ValueError("empty trace")
    return min(trace.records, key=lambda r: (r.train_error, r.kernel_size, r.t))
