"""Cross-validate evolved kernels and the k-NN grid on several datasets.

Writes one JSON per dataset plus a combined ``table.csv`` / ``table.md``.
Defaults are the full settings (population 1000, 100 generations, 10 runs
per fold), which take hours per dataset; ``--quick`` switches to the
reduced desk-scale settings used by the acceptance suite.

    python scripts/run_table.py data/bcw.csv data/bld.csv --out results --quick --seed 0
"""

import argparse
import logging
from pathlib import Path

from kernelgp.coevolution import CoevoConfig
from kernelgp.experiment import (
    ExperimentConfig, emit_report, fold_plan, report_row, results_to_json, run_ekm_experiment,
    run_knn_baseline,
)
from kernelgp.gp_engine import GpConfig


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("datasets", nargs="+")
    parser.add_argument("--out", default="results")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--quick", action="store_true",
                        help="population 200, 30 generations, 3 runs per fold, keep 2")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for path in args.datasets:
        if args.quick:
            coevo = CoevoConfig(gp=GpConfig(population_size=200, generations=30))
            config = ExperimentConfig(data=path, coevo=coevo, runs_per_fold=3, keep_best=2,
                                      seed=args.seed, jobs=args.jobs)
        else:
            config = ExperimentConfig(data=path, seed=args.seed, jobs=args.jobs)
        dataset = config.load()
        plan = fold_plan(dataset, config)
        ekm = run_ekm_experiment(config, dataset, plan)
        baseline = run_knn_baseline(config, dataset, plan)
        (out / f"{dataset.name}.json").write_text(results_to_json(ekm, baseline, config))
        rows.append(report_row(ekm, baseline, config.alpha))
        print(f"{dataset.name}: gp {ekm.test_error:.4f} (size {ekm.mean_size:.1f}), "
              f"knn {baseline.best_cell.test_error:.4f}")
    emit_report(rows, out, "table")


if __name__ == "__main__":
    main()
