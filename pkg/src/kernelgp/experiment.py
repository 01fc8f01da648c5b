"""Cross-validation protocol, k-NN baseline, paired t-test and persistence.

Protocol per fold: ``runs_per_fold`` independent co-evolutions on the
training part, keep the ``keep_best`` runs with the lowest training error of
their final model (ties: lower seed) and average their test errors. The
experiment error is the mean over folds.

Run seeds are ``SeedSequence((master_seed, fold, run)).generate_state(1)[0]``;
the fold plan uses ``random.Random(master_seed)``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .coevolution import CoevoConfig, GenerationRecord, coevolve, select_final
from .data_io import Dataset, FoldPlan, ScalingParams, load_csv, scale_apply, scale_fit, \
    stratified_folds
from .kernel_expr import KernelExpr, KernelExprError, format_expr, parse
from .margin_fitness import Examples, majority_vote, predict

log = logging.getLogger(__name__)

MODEL_FORMAT = "kernelgp-model"
MODEL_VERSION = 1


@dataclass
class ExperimentConfig:
    data: str = ""
    label_column: str = "last"
    header: bool = True
    name: str | None = None
    coevo: CoevoConfig = field(default_factory=CoevoConfig)
    folds: int = 10
    runs_per_fold: int = 10
    keep_best: int = 5
    scale: bool = True
    baseline_k: tuple[int, ...] = (1, 3, 5)
    baseline_scaling: tuple[bool, ...] = (False, True)
    seed: int = 0
    jobs: int = 1
    alpha: float = 0.05

    def __post_init__(self):
        if not 1 <= self.keep_best <= self.runs_per_fold:
            raise ValueError("need 1 <= keep_best <= runs_per_fold")
        if self.folds < 2:
            raise ValueError("need at least 2 folds")

    def load(self) -> Dataset:
        return load_csv(self.data, self.label_column, self.header, self.name)


def run_seed(master_seed: int, fold: int, run: int) -> int:
    return int(np.random.SeedSequence((master_seed, fold, run)).generate_state(1)[0])


def fold_plan(dataset: Dataset, config: ExperimentConfig) -> FoldPlan:
    return stratified_folds(dataset.y, config.folds, random.Random(config.seed))


# ---------------------------------------------------------------------------
# Evolved-kernel protocol

@dataclass
class RunSummary:
    fold: int
    run: int
    seed: int
    train_error: float
    test_error: float
    kernel: str
    kernel_size: int
    generation: int
    prototypes: list[int]


@dataclass
class FoldReport:
    fold: int
    runs: list[RunSummary]
    kept: list[int]
    train_error: float
    test_error: float
    mean_size: float


@dataclass
class ExperimentReport:
    dataset: str
    folds: list[FoldReport]
    train_error: float
    test_error: float
    mean_size: float

    @property
    def fold_test_errors(self) -> list[float]:
        return [f.test_error for f in self.folds]


def prepare_split(dataset: Dataset, train_idx, test_idx, scale: bool):
    """Training dataset, test features, and the scaling fitted on the train part."""
    train = dataset.subset(train_idx)
    X_test = dataset.X[np.asarray(test_idx, dtype=int)]
    params = None
    if scale:
        params = scale_fit(train.X)
        train = train.with_features(scale_apply(params, train.X))
        X_test = scale_apply(params, X_test)
    return train, X_test, params


def _run_cell(args) -> RunSummary:
    dataset, plan_train, plan_test, fold, run, seed, coevo, scale = args
    train, X_test, _ = prepare_split(dataset, plan_train, plan_test, scale)
    trace = coevolve(train, coevo, random.Random(seed))
    final = select_final(trace)
    protos = train.examples(final.prototypes.indices)
    predicted = predict(final.kernel, protos, X_test)
    test_error = float(np.mean(predicted != dataset.y[plan_test]))
    log.info("fold %d run %d: train %.4f test %.4f size %d",
             fold, run, final.train_error, test_error, final.kernel_size)
    return RunSummary(fold, run, seed, final.train_error, test_error,
                      format_expr(final.kernel), final.kernel_size, final.t,
                      [int(plan_train[i]) for i in final.prototypes.indices])


def keep_best_runs(runs: Sequence[RunSummary], keep: int) -> list[RunSummary]:
    return sorted(runs, key=lambda r: (r.train_error, r.seed))[:keep]


def summarize_fold(fold: int, runs: list[RunSummary], keep: int) -> FoldReport:
    kept = keep_best_runs(runs, keep)
    return FoldReport(
        fold, runs, [r.run for r in kept],
        float(np.mean([r.train_error for r in kept])),
        float(np.mean([r.test_error for r in kept])),
        float(np.mean([r.kernel_size for r in kept])),
    )


def run_ekm_experiment(config: ExperimentConfig, dataset: Dataset | None = None,
                       plan: FoldPlan | None = None) -> ExperimentReport:
    dataset = dataset if dataset is not None else config.load()
    plan = plan if plan is not None else fold_plan(dataset, config)
    cells = []
    for fold in range(plan.k):
        for run in range(config.runs_per_fold):
            cells.append((dataset, plan.train(fold), plan.test(fold), fold, run,
                          run_seed(config.seed, fold, run), config.coevo, config.scale))
    if config.jobs > 1:
        with ProcessPoolExecutor(config.jobs) as pool:
            results = list(pool.map(_run_cell, cells))
    else:
        results = [_run_cell(cell) for cell in cells]
    folds = []
    for fold in range(plan.k):
        runs = [r for r in results if r.fold == fold]
        folds.append(summarize_fold(fold, runs, config.keep_best))
    kept_sizes = [r.kernel_size for f in folds for r in f.runs if r.run in f.kept]
    return ExperimentReport(
        dataset.name, folds,
        float(np.mean([f.train_error for f in folds])),
        float(np.mean([f.test_error for f in folds])),
        float(np.mean(kept_sizes)),
    )


# ---------------------------------------------------------------------------
# Euclidean k-NN baseline

def knn_predict(train_X: np.ndarray, train_y: np.ndarray, query_X: np.ndarray, k: int,
                leave_one_out: bool = False) -> np.ndarray:
    """Euclidean k-NN; distance ties go to the lower training index.

    With ``leave_one_out`` the queries are the training points themselves and
    each one is excluded from its own neighbour list.
    """
    diff = query_X[:, None, :] - train_X[None, :, :]
    dist = np.einsum("qtf,qtf->qt", diff, diff)
    if leave_one_out:
        np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    labels = train_y[order]
    if k == 1:
        return labels[:, 0]
    return np.array([majority_vote(row) for row in labels], dtype=int)


@dataclass
class BaselineCell:
    k: int
    scaling: bool
    fold_train_errors: list[float]
    fold_test_errors: list[float]

    @property
    def train_error(self) -> float:
        return float(np.mean(self.fold_train_errors))

    @property
    def test_error(self) -> float:
        return float(np.mean(self.fold_test_errors))


@dataclass
class BaselineReport:
    dataset: str
    cells: list[BaselineCell]
    best: int

    @property
    def best_cell(self) -> BaselineCell:
        return self.cells[self.best]


def run_knn_baseline(config: ExperimentConfig, dataset: Dataset | None = None,
                     plan: FoldPlan | None = None) -> BaselineReport:
    dataset = dataset if dataset is not None else config.load()
    plan = plan if plan is not None else fold_plan(dataset, config)
    cells = []
    for k in config.baseline_k:
        for scaling in config.baseline_scaling:
            train_errors, test_errors = [], []
            for fold in range(plan.k):
                train, X_test, _ = prepare_split(dataset, plan.train(fold), plan.test(fold),
                                                 scaling)
                y_test = dataset.y[plan.test(fold)]
                loo = knn_predict(train.X, train.y, train.X, k, leave_one_out=True)
                train_errors.append(float(np.mean(loo != train.y)))
                test = knn_predict(train.X, train.y, X_test, k)
                test_errors.append(float(np.mean(test != y_test)))
            cells.append(BaselineCell(k, scaling, train_errors, test_errors))
    best = min(range(len(cells)), key=lambda c: (cells[c].test_error, c))
    return BaselineReport(dataset.name, cells, best)


# ---------------------------------------------------------------------------
# Paired t-test

@dataclass(frozen=True)
class TTestResult:
    verdict: str  # "a_better", "b_better" or "tie"
    t: float
    critical: float
    n: int


def paired_t_test(errors_a: Sequence[float], errors_b: Sequence[float],
                  alpha: float = 0.05) -> TTestResult:
    """Two-tailed paired Student's t-test on per-fold error differences.

    Zero-variance differences with a nonzero mean count as significant.
    """
    a = np.asarray(errors_a, dtype=float)
    b = np.asarray(errors_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"paired samples must have equal length, got {a.shape} and {b.shape}")
    n = len(a)
    if n < 2:
        raise ValueError("need at least 2 paired values")
    diff = a - b
    critical = float(stats.t.ppf(1.0 - alpha / 2.0, n - 1))
    mean = float(np.mean(diff))
    if np.all(diff == 0) or mean == 0:
        return TTestResult("tie", 0.0, critical, n)
    sd = float(np.std(diff, ddof=1))
    # differences equal up to rounding (0.3-0.2 vs 0.4-0.3) count as constant
    constant = sd <= 1e-12 * abs(mean)
    t = np.copysign(np.inf, mean) if constant else mean / (sd / np.sqrt(n))
    if abs(t) <= critical:
        return TTestResult("tie", float(t), critical, n)
    # lower error is better
    return TTestResult("b_better" if mean > 0 else "a_better", float(t), critical, n)


# ---------------------------------------------------------------------------
# Model files

class ModelError(ValueError):
    pass


@dataclass
class KernelModel:
    kernel: KernelExpr
    prototypes: Examples
    label_names: tuple[str, ...]
    scaling: ScalingParams | None = None

    @property
    def d(self) -> int:
        return self.prototypes.X.shape[1]

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.d:
            raise ModelError(f"expected inputs with {self.d} features, got shape {X.shape}")
        if self.scaling is not None:
            X = scale_apply(self.scaling, X)
        return predict(self.kernel, self.prototypes, X, 1)

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kernel": format_expr(self.kernel),
            "d": self.d,
            "labels": list(self.label_names),
            "prototypes": {
                "X": self.prototypes.X.tolist(),
                "y": self.prototypes.y.tolist(),
                "index": self.prototypes.index.tolist(),
            },
            "scaling": self.scaling.to_dict() if self.scaling is not None else None,
        }


def model_from_run(record: GenerationRecord, train: Dataset,
                   scaling: ScalingParams | None) -> KernelModel:
    """Model for ``record`` where ``train`` holds the (possibly scaled) training set."""
    protos = train.examples(record.prototypes.indices)
    return KernelModel(record.kernel, protos, train.label_names, scaling)


def save_model(model: KernelModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=1) + "\n")


def load_model(path) -> KernelModel:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelError(f"cannot read model {path}: {exc}") from None
    try:
        if data.get("format") != MODEL_FORMAT:
            raise ModelError(f"{path}: not a {MODEL_FORMAT} file")
        if data.get("version") != MODEL_VERSION:
            raise ModelError(f"{path}: unsupported model version {data.get('version')!r}")
        d = int(data["d"])
        kernel = parse(data["kernel"], d)
        X = np.array(data["prototypes"]["X"], dtype=float)
        y = np.array(data["prototypes"]["y"], dtype=int)
        index = np.array(data["prototypes"]["index"], dtype=int)
        if X.ndim != 2 or X.shape[1] != d or len(y) != len(X) or len(index) != len(X):
            raise ModelError(f"{path}: prototype table does not match d={d}")
        scaling = ScalingParams.from_dict(data["scaling"]) if data["scaling"] else None
        if scaling is not None and (scaling.minimum.shape != (d,) or scaling.maximum.shape != (d,)):
            raise ModelError(f"{path}: scaling parameters do not match d={d}")
        labels = tuple(str(v) for v in data["labels"])
    except ModelError:
        raise
    except (KeyError, TypeError, ValueError, KernelExprError) as exc:
        raise ModelError(f"{path}: malformed model ({exc})") from None
    return KernelModel(kernel, Examples(X, y, index), labels, scaling)


# ---------------------------------------------------------------------------
# Reports

@dataclass
class ReportRow:
    dataset: str
    knn_k: int
    knn_scaling: bool
    knn_train_error: float
    knn_test_error: float
    gp_train_error: float
    gp_test_error: float
    gp_mean_size: float
    t_statistic: float
    verdict: str

    @property
    def winner(self) -> str:
        return {"a_better": "gp", "b_better": "knn"}.get(self.verdict, "tie")


def report_row(ekm: ExperimentReport, baseline: BaselineReport, alpha: float = 0.05) -> ReportRow:
    best = baseline.best_cell
    test = paired_t_test(ekm.fold_test_errors, best.fold_test_errors, alpha)
    return ReportRow(ekm.dataset, best.k, best.scaling, best.train_error, best.test_error,
                     ekm.train_error, ekm.test_error, ekm.mean_size, test.t, test.verdict)


CSV_COLUMNS = ["dataset", "knn_k", "knn_scaling", "knn_train_error", "knn_test_error",
               "gp_train_error", "gp_test_error", "gp_mean_size", "t_statistic", "winner"]


def rows_to_csv(rows: Sequence[ReportRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        writer.writerow([r.dataset, r.knn_k, "yes" if r.knn_scaling else "no",
                         repr(r.knn_train_error), repr(r.knn_test_error),
                         repr(r.gp_train_error), repr(r.gp_test_error),
                         repr(r.gp_mean_size), repr(r.t_statistic), r.winner])
    return buf.getvalue()


def rows_to_markdown(rows: Sequence[ReportRow]) -> str:
    """Table with the best test error(s) of each row in bold."""
    lines = [
        "| Data set | k-NN k | Scaling | k-NN train error | k-NN test error "
        "| GP train error | GP best-half test error | GP mean size | Winner |",
        "|---|---|---|---|---|---|---|---|---|",
    ]
    for r in rows:
        knn = f"{r.knn_test_error:.3f}"
        gp = f"{r.gp_test_error:.3f}"
        if r.winner in ("knn", "tie"):
            knn = f"**{knn}**"
        if r.winner in ("gp", "tie"):
            gp = f"**{gp}**"
        lines.append(
            f"| {r.dataset} | {r.knn_k} | {'Yes' if r.knn_scaling else 'No'} "
            f"| {r.knn_train_error:.3f} | {knn} | {r.gp_train_error:.3f} | {gp} "
            f"| {r.gp_mean_size:.0f} | {r.winner} |")
    return "\n".join(lines) + "\n"


def emit_report(rows: Sequence[ReportRow], out_dir, stem: str = "report",
                formats: Sequence[str] = ("csv", "markdown")) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in formats:
        if fmt == "csv":
            path = out_dir / f"{stem}.csv"
            path.write_text(rows_to_csv(rows))
        elif fmt == "markdown":
            path = out_dir / f"{stem}.md"
            path.write_text(rows_to_markdown(rows))
        else:
            raise ValueError(f"unknown report format {fmt!r}")
        written.append(path)
    return written


def read_report_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def results_to_json(ekm: ExperimentReport | None, baseline: BaselineReport | None,
                    config: ExperimentConfig) -> str:
    payload = {"config": _config_dict(config)}
    if ekm is not None:
        payload["gp"] = asdict(ekm)
    if baseline is not None:
        payload["knn"] = {
            "dataset": baseline.dataset,
            "best": baseline.best,
            "cells": [asdict(c) | {"train_error": c.train_error, "test_error": c.test_error}
                      for c in baseline.cells],
        }
    return json.dumps(payload, indent=1, sort_keys=True) + "\n"


def results_from_json(text: str) -> tuple[ExperimentReport | None, BaselineReport | None]:
    data = json.loads(text)
    ekm = baseline = None
    if "gp" in data:
        g = data["gp"]
        folds = [FoldReport(f["fold"], [RunSummary(**r) for r in f["runs"]], f["kept"],
                            f["train_error"], f["test_error"], f["mean_size"])
                 for f in g["folds"]]
        ekm = ExperimentReport(g["dataset"], folds, g["train_error"], g["test_error"],
                               g["mean_size"])
    if "knn" in data:
        k = data["knn"]
        cells = [BaselineCell(c["k"], c["scaling"], c["fold_train_errors"], c["fold_test_errors"])
                 for c in k["cells"]]
        baseline = BaselineReport(k["dataset"], cells, k["best"])
    return ekm, baseline


def _config_dict(config: ExperimentConfig) -> dict:
    data = asdict(config)
    data.pop("jobs")  # execution detail, must not change report bytes
    return data
