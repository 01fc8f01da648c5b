"""Command-line driver.

    kernelgp evolve   --data bcw.csv --model bcw.model.json
    kernelgp crossval --data bcw.csv --out results/
    kernelgp baseline --data bcw.csv --out results/
    kernelgp report   results/bcw.json results/pid.json --out results/ --stem table
    kernelgp predict  --model bcw.model.json --data new.csv

Any long option can also come from ``--config FILE`` holding ``key = value``
lines (``#`` comments allowed); command-line flags win over the file.
"""

from __future__ import annotations

import argparse
import csv
import logging
import random
import sys
from pathlib import Path

import numpy as np

from . import experiment as exp
from .coevolution import CoevoConfig, GenerationRecord, coevolve, select_final
from .data_io import DataError, load_csv, scale_apply, scale_fit
from .gp_engine import GpConfig

TRUE = {"1", "true", "yes", "on"}
FALSE = {"0", "false", "no", "off"}


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in TRUE:
        return True
    if value in FALSE:
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _data_args(p: argparse.ArgumentParser, required: bool = True):
    p.add_argument("--data", required=required, help="CSV file")
    p.add_argument("--label-column", choices=("first", "last"), default="last")
    p.add_argument("--header", type=_bool, default=True, help="first row is a header")
    p.add_argument("--name", default=None, help="dataset name for reports")


def _evolution_args(p: argparse.ArgumentParser):
    g = p.add_argument_group("evolution")
    g.add_argument("--population", type=int, default=1000)
    g.add_argument("--generations", type=int, default=100)
    g.add_argument("--tournament", type=int, default=7)
    g.add_argument("--p-crossover", type=float, default=0.7)
    g.add_argument("--p-standard-mutation", type=float, default=0.1)
    g.add_argument("--p-swap-mutation", type=float, default=0.1)
    g.add_argument("--p-shrink-mutation", type=float, default=0.1)
    g.add_argument("--init-depth-min", type=int, default=2)
    g.add_argument("--init-depth-max", type=int, default=5)
    g.add_argument("--max-depth", type=int, default=17)
    g.add_argument("--prototypes", type=int, default=50)
    g.add_argument("--cases", type=int, default=100)
    g.add_argument("--prototype-offspring", type=int, default=4)
    g.add_argument("--case-offspring", type=int, default=2)
    g.add_argument("--prototype-rate", type=float, default=0.25)
    g.add_argument("--case-rate", type=float, default=0.5)
    g.add_argument("--scale", type=_bool, default=True,
                   help="min-max scale features (fit on training data)")
    g.add_argument("--seed", type=int, default=0)


def _protocol_args(p: argparse.ArgumentParser):
    g = p.add_argument_group("protocol")
    g.add_argument("--folds", type=int, default=10)
    g.add_argument("--runs", type=int, default=10, help="runs per fold")
    g.add_argument("--keep-best", type=int, default=5)
    g.add_argument("--jobs", type=int, default=1, help="parallel (fold, run) cells")
    g.add_argument("--alpha", type=float, default=0.05)
    g.add_argument("--out", default=".", help="output directory")
    g.add_argument("--verbose", action="store_true", help="stream every generation")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kernelgp", description=__doc__.split("\n")[0])
    parser.add_argument("--config", help="key = value file with option defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evolve", help="single co-evolution run on a whole dataset")
    _data_args(p)
    _evolution_args(p)
    p.add_argument("--model", default="model.json", help="output model file")

    p = sub.add_parser("crossval", help="cross-validated protocol plus k-NN baseline")
    _data_args(p)
    _evolution_args(p)
    _protocol_args(p)

    p = sub.add_parser("baseline", help="Euclidean k-NN grid under cross-validation")
    _data_args(p)
    _protocol_args(p)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("report", help="combine crossval results into tables")
    p.add_argument("results", nargs="+", help="JSON files written by crossval")
    p.add_argument("--out", default=".")
    p.add_argument("--stem", default="report")
    p.add_argument("--formats", default="csv,markdown")
    p.add_argument("--alpha", type=float, default=0.05)

    p = sub.add_parser("predict", help="classify rows with a saved model")
    p.add_argument("--model", required=True)
    _data_args(p)
    p.add_argument("--labelled", type=_bool, default=True,
                   help="the CSV has a label column (an error rate is then reported)")
    p.add_argument("--output", default="-", help="predictions CSV ('-' for stdout)")
    return parser


def read_config_file(path) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _apply_config(subparser: argparse.ArgumentParser, values: dict[str, str]):
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, text in values.items():
        action = actions.get(key)
        if action is None:
            continue
        if action.type is not None:
            defaults[key] = action.type(text)
        elif isinstance(action, argparse._StoreTrueAction):
            defaults[key] = _bool(text)
        else:
            defaults[key] = text
    subparser.set_defaults(**defaults)


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        values = read_config_file(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        _apply_config(sub, values)
        args = parser.parse_args(argv)
    return args


def coevo_config(args) -> CoevoConfig:
    gp = GpConfig(
        population_size=args.population, generations=args.generations,
        tournament_size=args.tournament, prob_crossover=args.p_crossover,
        prob_standard_mutation=args.p_standard_mutation,
        prob_swap_mutation=args.p_swap_mutation, prob_shrink_mutation=args.p_shrink_mutation,
        init_depth_min=args.init_depth_min, init_depth_max=args.init_depth_max,
        max_depth=args.max_depth,
    )
    return CoevoConfig(args.prototypes, args.cases, args.prototype_offspring,
                       args.case_offspring, args.prototype_rate, args.case_rate, gp)


def experiment_config(args, with_evolution: bool = True) -> exp.ExperimentConfig:
    return exp.ExperimentConfig(
        data=args.data, label_column=args.label_column, header=args.header, name=args.name,
        coevo=coevo_config(args) if with_evolution else CoevoConfig(),
        folds=args.folds, runs_per_fold=getattr(args, "runs", 10),
        keep_best=getattr(args, "keep_best", 5), scale=getattr(args, "scale", True),
        seed=args.seed, jobs=args.jobs, alpha=args.alpha,
    )


def progress_line(rec: GenerationRecord, prefix: str = "") -> str:
    return (f"{prefix}t={rec.t} F={rec.fitness:.4f} size={rec.kernel_size} "
            f"train_error={rec.train_error:.4f}")


def cmd_evolve(args) -> int:
    dataset = load_csv(args.data, args.label_column, args.header, args.name)
    scaling = scale_fit(dataset.X) if args.scale else None
    train = dataset.with_features(scale_apply(scaling, dataset.X)) if scaling else dataset
    trace = coevolve(train, coevo_config(args), random.Random(args.seed),
                     on_generation=lambda r: print(progress_line(r), file=sys.stderr))
    final = select_final(trace)
    exp.save_model(exp.model_from_run(final, train, scaling), args.model)
    print(f"selected t={final.t} train_error={final.train_error:.4f} "
          f"size={final.kernel_size} -> {args.model}", file=sys.stderr)
    return 0


def cmd_crossval(args) -> int:
    config = experiment_config(args)
    dataset = config.load()
    plan = exp.fold_plan(dataset, config)
    logging.getLogger("kernelgp.experiment").setLevel(logging.INFO)
    if args.verbose:
        logging.getLogger("kernelgp.coevolution").setLevel(logging.INFO)
    ekm = exp.run_ekm_experiment(config, dataset, plan)
    baseline = exp.run_knn_baseline(config, dataset, plan)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{dataset.name}.json").write_text(exp.results_to_json(ekm, baseline, config))
    exp.emit_report([exp.report_row(ekm, baseline, config.alpha)], out, dataset.name)
    print(f"{dataset.name}: gp test error {ekm.test_error:.4f}, "
          f"knn test error {baseline.best_cell.test_error:.4f}", file=sys.stderr)
    return 0


def cmd_baseline(args) -> int:
    config = experiment_config(args, with_evolution=False)
    dataset = config.load()
    baseline = exp.run_knn_baseline(config, dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{dataset.name}_knn.json").write_text(exp.results_to_json(None, baseline, config))
    lines = ["| k | Scaling | Train error | Test error | Best |", "|---|---|---|---|---|"]
    for i, cell in enumerate(baseline.cells):
        lines.append(f"| {cell.k} | {'Yes' if cell.scaling else 'No'} | {cell.train_error:.3f} "
                     f"| {cell.test_error:.3f} | {'*' if i == baseline.best else ''} |")
    (out / f"{dataset.name}_knn.md").write_text("\n".join(lines) + "\n")
    best = baseline.best_cell
    print(f"{dataset.name}: best k={best.k} scaling={'yes' if best.scaling else 'no'} "
          f"test error {best.test_error:.4f}", file=sys.stderr)
    return 0


def cmd_report(args) -> int:
    rows = []
    for path in args.results:
        ekm, baseline = exp.results_from_json(Path(path).read_text())
        if ekm is None or baseline is None:
            raise ValueError(f"{path}: needs both evolved-kernel and k-NN results")
        rows.append(exp.report_row(ekm, baseline, args.alpha))
    formats = [f.strip() for f in args.formats.split(",") if f.strip()]
    exp.emit_report(rows, args.out, args.stem, formats)
    return 0


def cmd_predict(args) -> int:
    model = exp.load_model(args.model)
    if args.labelled:
        dataset = load_csv(args.data, args.label_column, args.header)
        X = dataset.X
    else:
        with open(args.data, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r]
        if args.header:
            rows = rows[1:]
        X = np.array(rows, dtype=float)
    predicted = model.predict(X)
    names = model.label_names
    stream = sys.stdout if args.output == "-" else open(args.output, "w", newline="")
    try:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(["prediction"])
        for label in predicted:
            writer.writerow([names[label] if 0 <= label < len(names) else label])
    finally:
        if stream is not sys.stdout:
            stream.close()
    if args.labelled:
        # label ids are assigned by first appearance, so map through the names
        truth = [dataset.label_names[i] for i in dataset.y]
        guess = [names[i] for i in predicted]
        error = float(np.mean([a != b for a, b in zip(truth, guess)]))
        print(f"error rate {error:.4f} on {len(truth)} rows", file=sys.stderr)
    return 0


COMMANDS = {
    "evolve": cmd_evolve,
    "crossval": cmd_crossval,
    "baseline": cmd_baseline,
    "report": cmd_report,
    "predict": cmd_predict,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, stream=sys.stderr,
                        format="%(name)s: %(message)s")
    try:
        args = parse_args(argv)
    except ValueError as exc:
        print(f"kernelgp: {exc}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except (DataError, exp.ModelError, ValueError, OSError) as exc:
        print(f"kernelgp {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
