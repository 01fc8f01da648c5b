"""Acceptance checks, one printed PASS/FAIL line per criterion.

Run alone with ``pytest tests/test_acceptance.py -v`` or
``python -m tests.test_acceptance``. Criterion 2 takes several minutes on one
core; deselect it with ``-m "not slow"``.
"""

import random
import statistics
import tempfile
from pathlib import Path

import numpy as np
import pytest

from kernelgp.cli import main as cli_main
from kernelgp.coevolution import (
    CoevoConfig, IndexSubset, coevolve, mutate_subset, stratified_sample,
)
from kernelgp.data_io import load_csv, stratified_folds
from kernelgp.experiment import ExperimentConfig, run_ekm_experiment, run_knn_baseline
from kernelgp.gp_engine import GpConfig, Individual, primitive_set, random_tree, select_parent
from kernelgp.kernel_expr import KernelExpr, PairBatch, Primitive
from kernelgp.margin_fitness import KernelGrid, LabeledExample, dissimilarity_sq, fitness

from . import oracles
from .acceptance_log import record

DATA = Path(__file__).resolve().parent.parent / "data"

# (dataset, expected k, expected scaling, target test error, tolerance)
KNN_TARGETS = [
    ("bcw", 5, False, 0.025, 0.015),
    ("pid", 5, True, 0.255, 0.02),
    ("bld", 5, False, 0.353, 0.03),
]
EKM_LIMITS = {"bcw": 0.08, "bld": 0.42}
EKM_SEEDS = (0, 1, 2)


def _random_trees(n, dim, seed, max_depth=6):
    rng = random.Random(seed)
    pset = primitive_set(dim)
    return [random_tree(pset, rng.randint(2, max_depth), rng.choice(("grow", "full")), rng)
            for _ in range(n)]


def _points(rng, n, dim):
    scale = rng.choice([0.01, 1.0, 10.0], size=(n, 1))
    return rng.normal(size=(n, dim)) * scale


# ---------------------------------------------------------------------------
# 1. k-NN baseline

@pytest.mark.parametrize("name, k, scaling, target, tol", KNN_TARGETS)
def test_c1_knn_baseline(name, k, scaling, target, tol):
    config = ExperimentConfig(data=str(DATA / f"{name}.csv"), seed=0)
    report = run_knn_baseline(config)
    best = report.best_cell
    ok = (best.k, best.scaling) == (k, scaling) and abs(best.test_error - target) <= tol
    record(f"C1 k-NN baseline {name}", ok,
           f"selected k={best.k} scaling={'yes' if best.scaling else 'no'} "
           f"test error {best.test_error:.4f} (want k={k} "
           f"scaling={'yes' if scaling else 'no'}, {target} +/- {tol})")
    assert ok


# ---------------------------------------------------------------------------
# 2. Evolved kernels at reduced settings

def _reduced_config(name, seed):
    gp = GpConfig(population_size=200, generations=30)
    return ExperimentConfig(data=str(DATA / f"{name}.csv"), coevo=CoevoConfig(gp=gp),
                            runs_per_fold=3, keep_best=2, seed=seed)


@pytest.mark.slow
@pytest.mark.parametrize("name", sorted(EKM_LIMITS))
def test_c2_evolved_kernel_reduced(name):
    errors = []
    for seed in EKM_SEEDS:
        report = run_ekm_experiment(_reduced_config(name, seed))
        errors.append(report.test_error)
        print(f"  {name} seed {seed}: best-half test error {report.test_error:.4f} "
              f"mean size {report.mean_size:.1f}", flush=True)
    median = statistics.median(errors)
    ok = median <= EKM_LIMITS[name]
    record(f"C2 evolved kernel {name}", ok,
           f"median best-half test error {median:.4f} over seeds {EKM_SEEDS} "
           f"(per seed {', '.join(f'{e:.4f}' for e in errors)}; limit {EKM_LIMITS[name]})")
    assert ok


# ---------------------------------------------------------------------------
# 3. Property suite

def test_c3_symmetry_fuzz():
    rng = np.random.default_rng(0)
    dim, trees, pairs = 4, 1000, 100
    worst = 0.0
    failures = 0
    for expr in _random_trees(trees, dim, seed=1):
        left, right = _points(rng, pairs, dim), _points(rng, pairs, dim)
        a = PairBatch(left, right).evaluate(expr)
        b = PairBatch(right, left).evaluate(expr)
        rel = np.abs(a - b) / np.maximum(np.abs(a), np.abs(b)).clip(min=np.finfo(float).tiny)
        rel[a == b] = 0.0
        worst = max(worst, float(rel.max()))
        failures += int(np.sum(rel > 1e-9))
    ok = failures == 0
    record("C3 symmetry", ok, f"{trees * pairs} (tree, pair) samples, worst relative "
           f"difference {worst:.3g}, {failures} above 1e-9")
    assert ok


def test_c3_self_dissimilarity():
    rng = np.random.default_rng(2)
    dim = 3
    nonzero = 0
    for expr in _random_trees(10_000, dim, seed=3, max_depth=5):
        x = _points(rng, 1, dim)[0]
        nonzero += dissimilarity_sq(expr, x, x) != 0.0
    ok = nonzero == 0
    record("C3 d(x,x) == 0", ok, f"10000 random (K, x), {nonzero} nonzero")
    assert ok


def _instance(rng, dim):
    ell, m = int(rng.integers(2, 11)), int(rng.integers(1, 11))
    n_classes = int(rng.integers(2, 4))
    protos = [(tuple(rng.integers(-3, 4, dim).astype(float)), int(rng.integers(n_classes)), i)
              for i in range(ell)]
    cases = [(tuple(rng.integers(-3, 4, dim).astype(float)), int(rng.integers(n_classes)),
              100 + i) for i in range(m)]
    # some fitness cases are prototypes themselves
    for _ in range(int(rng.integers(0, 3))):
        cases[int(rng.integers(m))] = protos[int(rng.integers(ell))]
    return protos, cases


def _examples(rows):
    return [LabeledExample(f, lab, idx) for f, lab, idx in rows]


def test_c3_fitness_oracle():
    rng = np.random.default_rng(4)
    dim = 3
    worst = 0.0
    for expr in _random_trees(500, dim, seed=5, max_depth=5):
        protos, cases = _instance(rng, dim)
        got = fitness(expr, _examples(protos), _examples(cases))
        worst = max(worst, abs(got - oracles.fitness(expr, protos, cases)))
    ok = worst <= 1e-12
    record("C3 fitness oracle", ok, f"500 instances (l, m <= 10), max |difference| {worst:.3g}")
    assert ok


def test_c3_scaling_invariance():
    rng = np.random.default_rng(6)
    dim = 3
    trees = _random_trees(400, dim, seed=7, max_depth=5)
    mismatches = 0
    for t in range(200):
        K, K2 = trees[2 * t], trees[2 * t + 1]
        a = float(rng.choice([0.5, 0.25, 0.125, 0.0625]))
        protos, cases = _instance(rng, dim)
        grid = KernelGrid(_examples(protos), _examples(cases))

        def scaled(expr):
            return KernelExpr.build(Primitive("MUL2"),
                                    KernelExpr([Primitive("E", value=a)]), expr)

        same_ranks = all(np.array_equal(r1, r2)
                         for r1, r2 in zip(grid.ranks(K), grid.ranks(scaled(K))))
        f1, f2 = grid.fitness(K), grid.fitness(K2)
        g1, g2 = grid.fitness(scaled(K)), grid.fitness(scaled(K2))
        same_order = np.sign(f1 - f2) == np.sign(g1 - g2)
        same_labels = np.array_equal(grid.classify(K, 1), grid.classify(scaled(K), 1))
        mismatches += not (same_ranks and same_order and same_labels)
    ok = mismatches == 0
    record("C3 positive scaling", ok, f"200 (K, a, instance) triples, {mismatches} mismatches")
    assert ok


def test_c3_stratification():
    rng = random.Random(8)
    np_rng = np.random.default_rng(8)
    bad = 0
    for _ in range(1000):
        counts = np_rng.integers(3, 40, size=int(np_rng.integers(2, 4)))
        y = np.repeat(np.arange(len(counts)), counts)
        size = rng.randint(2, len(y))
        sub = stratified_sample(y, size, rng)
        child = mutate_subset(sub, rng.choice([0.25, 0.5, 1.0]), y, rng)
        quota_ok = all(abs(sub.class_counts[c] - size * n / len(y)) < 1
                       for c, n in enumerate(counts))
        bad += not (quota_ok
                    and IndexSubset.of(sub.indices, y).class_counts == sub.class_counts
                    and IndexSubset.of(child.indices, y).class_counts == sub.class_counts
                    and len(set(sub.indices)) == size and len(set(child.indices)) == size)
    fold_bad = 0
    for name in ("bcw", "pid", "bld"):
        y = load_csv(DATA / f"{name}.csv").y
        plan = stratified_folds(y, 10, random.Random(0))
        every = np.concatenate([plan.test(f) for f in range(10)])
        fold_bad += sorted(every.tolist()) != list(range(len(y)))
        for f in range(10):
            per_class = np.bincount(y[plan.test(f)], minlength=2)
            fold_bad += any(abs(per_class[c] - n / 10) >= 1
                            for c, n in enumerate(np.bincount(y)))
    ok = bad == 0 and fold_bad == 0
    record("C3 stratification", ok, f"1000 sample/mutate draws ({bad} bad); folds on "
           f"bcw/pid/bld partition and stratify ({fold_bad} bad)")
    assert ok


def test_c3_call_count():
    data = load_csv(DATA / "bld.csv").subset(range(0, 345, 5))
    p, lp, ls, ell, m = 12, 4, 2, 8, 10
    gp = GpConfig(population_size=p, generations=3, tournament_size=3)
    config = CoevoConfig(prototypes=ell, cases=m, prototype_offspring=lp, case_offspring=ls,
                         gp=gp)
    trace = coevolve(data, config, random.Random(0))
    expected = (p + lp + ls) * ell * m
    counts = [r.fitness_pair_evaluations for r in trace.records[1:]]
    ok = all(c == expected for c in counts) \
        and trace[0].fitness_pair_evaluations == p * ell * m
    record("C3 evaluation count", ok,
           f"per-generation fitness pair evaluations {counts}, expected "
           f"(p + lp + ls) * l * m = {expected}")
    assert ok


# ---------------------------------------------------------------------------
# 4. Determinism of crossval

def test_c4_crossval_determinism():
    args = ["--data", str(DATA / "bld.csv"), "--folds", "3", "--runs", "2", "--keep-best", "1",
            "--population", "30", "--generations", "3", "--prototypes", "20", "--cases", "30",
            "--seed", "11"]
    outputs = []
    with tempfile.TemporaryDirectory() as tmp:
        for run, jobs in (("first", "1"), ("second", "1"), ("parallel", "2")):
            out = Path(tmp) / run
            assert cli_main(["crossval", *args, "--jobs", jobs, "--out", str(out)]) == 0
            outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    ok = outputs[0] == outputs[1] == outputs[2] and len(outputs[0]) == 3
    record("C4 determinism", ok,
           f"crossval twice sequential and once with 2 jobs: files {sorted(outputs[0])} "
           f"{'identical' if ok else 'differ'}")
    assert ok


# ---------------------------------------------------------------------------
# 5. Lexicographic parsimony

class _Recording(random.Random):
    def __init__(self, seed):
        super().__init__(seed)
        self.draws = []

    def randrange(self, *args, **kw):
        value = super().randrange(*args, **kw)
        self.draws.append(value)
        return value


def test_c5_lexicographic_tournament():
    rng = random.Random(9)
    population = []
    for _ in range(60):
        size = rng.randint(1, 6)
        expr = KernelExpr([Primitive("EXP")] * (size - 1) + [Primitive("DOT")])
        population.append(Individual(expr, float(rng.randint(0, 4))))
    spy = _Recording(10)
    dominated = 0
    for _ in range(10_000):
        spy.draws.clear()
        winner = select_parent(population, spy, 7)
        contenders = [population[i] for i in spy.draws[:7]]
        dominated += any(
            c.fitness >= winner.fitness and c.size <= winner.size
            and (c.fitness > winner.fitness or c.size < winner.size)
            for c in contenders)
    ok = dominated == 0
    record("C5 lexicographic parsimony", ok, f"10000 tournaments of 7, {dominated} dominated winners")
    assert ok


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-v"]))
