"""Tree-based GP machinery: initialization, selection and variation.

All randomness comes from a caller-provided :class:`random.Random`, so a
seeded generator reproduces a run exactly.
"""

from __future__ import annotations

import functools
import random
from dataclasses import dataclass
from typing import Callable, Sequence

from .kernel_expr import (
    FUNCTION_ARITY,
    INDEXED_TERMINALS,
    KernelExpr,
    Primitive,
)

OPERATORS = ("crossover", "standard_mutation", "swap_mutation", "shrink_mutation")


@dataclass
class GpConfig:
    population_size: int = 1000
    generations: int = 100
    tournament_size: int = 7
    prob_crossover: float = 0.7
    prob_standard_mutation: float = 0.1
    prob_swap_mutation: float = 0.1
    prob_shrink_mutation: float = 0.1
    init_depth_min: int = 2
    init_depth_max: int = 5
    max_depth: int = 17
    retries: int = 3

    def __post_init__(self):
        total = sum(self.operator_probabilities)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"operator probabilities must sum to 1, got {total}")
        if self.population_size < self.tournament_size:
            raise ValueError("population_size must be >= tournament_size")
        if not 1 <= self.init_depth_min <= self.init_depth_max <= self.max_depth:
            raise ValueError("need 1 <= init_depth_min <= init_depth_max <= max_depth")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")

    @property
    def operator_probabilities(self) -> tuple[float, float, float, float]:
        return (self.prob_crossover, self.prob_standard_mutation,
                self.prob_swap_mutation, self.prob_shrink_mutation)


@dataclass
class Individual:
    expr: KernelExpr
    fitness: float | None = None

    @property
    def size(self) -> int:
        return self.expr.size

    def clone(self) -> "Individual":
        # expressions are immutable, sharing is safe
        return Individual(self.expr)


class PrimitiveSet:
    """Primitive pool for dimension ``d`` with selection weights.

    Every member of an indexed family (A_i, M_i, S_i, I_i) weighs ``1/d`` and
    every C_ij weighs ``2/(d(d+1))``, so each family weighs as much as one
    plain terminal (DOT, EUC, E). Functions weigh 1 each.
    """

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError(f"dimension must be >= 1, got {dim}")
        self.dim = dim
        self.functions = [Primitive(kind) for kind in FUNCTION_ARITY]
        self.by_arity: dict[int, list[Primitive]] = {}
        for prim in self.functions:
            self.by_arity.setdefault(prim.arity, []).append(prim)

        terminals: list[Primitive] = []
        weights: list[float] = []
        for kind in INDEXED_TERMINALS:
            for i in range(1, dim + 1):
                terminals.append(Primitive(kind, i=i))
                weights.append(1.0 / dim)
        pair_weight = 2.0 / (dim * (dim + 1))
        for i in range(1, dim + 1):
            for j in range(1, i + 1):
                terminals.append(Primitive("C", i=i, j=j))
                weights.append(pair_weight)
        terminals += [Primitive("DOT"), Primitive("EUC"), Primitive("E")]
        weights += [1.0, 1.0, 1.0]
        self.terminals = terminals
        self.terminal_weights = weights
        self._terminal_cum = _cumulative(weights)
        self.terminal_weight = sum(weights)

    def random_terminal(self, rng: random.Random) -> Primitive:
        prim = rng.choices(self.terminals, cum_weights=self._terminal_cum)[0]
        if prim.kind == "E":
            return Primitive("E", value=rng.uniform(-1.0, 1.0))
        return prim

    def random_function(self, rng: random.Random) -> Primitive:
        return rng.choice(self.functions)

    def random_any(self, rng: random.Random) -> Primitive:
        total = len(self.functions) + self.terminal_weight
        if rng.random() * total < len(self.functions):
            return self.random_function(rng)
        return self.random_terminal(rng)

    def alternative(self, prim: Primitive, rng: random.Random) -> Primitive | None:
        """Different primitive of the same arity, or None when none exists."""
        if prim.is_terminal:
            # a fresh E constant counts as a different primitive
            while True:
                other = self.random_terminal(rng)
                if other != prim:
                    return other
        pool = [p for p in self.by_arity[prim.arity] if p != prim]
        return rng.choice(pool) if pool else None


@functools.lru_cache(maxsize=None)
def primitive_set(dim: int) -> PrimitiveSet:
    return PrimitiveSet(dim)


def _cumulative(weights: Sequence[float]) -> list[float]:
    out, acc = [], 0.0
    for w in weights:
        acc += w
        out.append(acc)
    return out


def random_tree(pset: PrimitiveSet, depth: int, method: str,
                rng: random.Random) -> KernelExpr:
    """"full" or "grow" tree whose depth is exactly / at most ``depth``.

    The root is always a function when ``depth > 1``.
    """
    nodes: list[Primitive] = []

    def build(level: int):
        if level == depth:
            prim = pset.random_terminal(rng)
        elif level == 1 or method == "full":
            prim = pset.random_function(rng)
        else:
            prim = pset.random_any(rng)
        nodes.append(prim)
        for _ in range(prim.arity):
            build(level + 1)

    build(1)
    return KernelExpr(nodes)


def init_population(config: GpConfig, dim: int, rng: random.Random) -> list[Individual]:
    """Ramped half-and-half over ``init_depth_min..init_depth_max``."""
    pset = primitive_set(dim)
    depths = list(range(config.init_depth_min, config.init_depth_max + 1))
    population = []
    for k in range(config.population_size):
        depth = depths[(k // 2) % len(depths)]
        method = "full" if k % 2 == 0 else "grow"
        population.append(Individual(random_tree(pset, depth, method, rng)))
    return population


def _key(ind: Individual) -> tuple[float, int]:
    return (ind.fitness, -ind.size)


def select_parent(population: Sequence[Individual], rng: random.Random,
                  tournament_size: int = 7) -> Individual:
    """Tournament with lexicographic parsimony: fitness first, then size."""
    contenders = [population[rng.randrange(len(population))]
                  for _ in range(tournament_size)]
    for ind in contenders:
        if ind.fitness is None:
            raise ValueError("tournament over an unevaluated individual")
    best = max(_key(ind) for ind in contenders)
    winners = [ind for ind in contenders if _key(ind) == best]
    return winners[0] if len(winners) == 1 else rng.choice(winners)


def _within_limit(op: Callable[[], KernelExpr], fallback: KernelExpr,
                  config: GpConfig) -> KernelExpr:
    for _ in range(1 + config.retries):
        child = op()
        if child.depth <= config.max_depth:
            return child
    return fallback


def subtree_crossover(a: Individual, b: Individual, rng: random.Random,
                      config: GpConfig | None = None) -> Individual:
    """Replace a random subtree of ``a`` with a random subtree of ``b``."""
    config = config or GpConfig()

    def op():
        cut = rng.randrange(a.size)
        donor = b.expr.subtree(rng.randrange(b.size))
        return a.expr.replace(cut, donor)

    return Individual(_within_limit(op, a.expr, config))


def standard_mutation(a: Individual, config: GpConfig, dim: int,
                      rng: random.Random) -> Individual:
    """Subtree crossover with a freshly grown random tree."""
    pset = primitive_set(dim)
    depth = rng.randint(config.init_depth_min, config.init_depth_max)
    other = Individual(random_tree(pset, depth, "grow", rng))
    return subtree_crossover(a, other, rng, config)


def swap_node_mutation(a: Individual, dim: int, rng: random.Random) -> Individual:
    """Swap one node's primitive for another of the same arity."""
    pset = primitive_set(dim)
    positions = list(range(a.size))
    rng.shuffle(positions)
    for pos in positions:
        replacement = pset.alternative(a.expr.nodes[pos], rng)
        if replacement is not None:
            nodes = list(a.expr.nodes)
            nodes[pos] = replacement
            return Individual(KernelExpr(nodes))
    return a.clone()


def shrink_mutation(a: Individual, rng: random.Random) -> Individual:
    """Replace a random internal node by one of its children."""
    internal = [pos for pos, node in enumerate(a.expr.nodes) if node.arity]
    if not internal:
        return a.clone()
    pos = rng.choice(internal)
    children = []
    child = pos + 1
    for _ in range(a.expr.nodes[pos].arity):
        children.append(child)
        child = a.expr.subtree_end(child)
    keep = a.expr.subtree(rng.choice(children))
    return Individual(a.expr.replace(pos, keep))


def choose_operator(config: GpConfig, rng: random.Random) -> str:
    return rng.choices(OPERATORS, weights=config.operator_probabilities)[0]


def next_generation(population: Sequence[Individual], config: GpConfig, dim: int,
                    rng: random.Random, operator_log: list | None = None) -> list[Individual]:
    """Generational replacement: ``population_size`` fresh children."""
    children = []
    k = config.tournament_size
    for _ in range(config.population_size):
        op = choose_operator(config, rng)
        if operator_log is not None:
            operator_log.append(op)
        parent = select_parent(population, rng, k)
        if op == "crossover":
            mate = select_parent(population, rng, k)
            child = subtree_crossover(parent, mate, rng, config)
        elif op == "standard_mutation":
            child = standard_mutation(parent, config, dim, rng)
        elif op == "swap_mutation":
            child = swap_node_mutation(parent, dim, rng)
        else:
            child = shrink_mutation(parent, rng)
        children.append(child)
    return children
