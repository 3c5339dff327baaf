"""Cross-validation harness comparing the three training modes.

Every mode sees the same fold plan and the same per-fold seed, so the
backbones start from identical weights (adapter weights are zero-filled
and draw nothing from the seed stream) and the comparison is controlled.
Runs land in ``out/fold<F>/<mode>/``; the harness then writes
``summary.json`` with per-fold reports, mean MSEs per mode, and per-fold
win counts (strict ``ou_total`` improvement), plus comparison charts.
Each (fold, mode) run is independent, so ``jobs > 1`` executes them in
worker processes; the artifacts are byte-identical for any job count
because every run is deterministic and the summary is assembled in a
fixed order.
"""

import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .artifacts import dump_json, write_run_artifacts
from .backbone import BackboneConfig, build_model
from .charts import fold_spread_chart, mode_comparison_chart
from .data import DatasetContainer, SplitSpec, plan_splits
from .errors import ConfigError
from .training import MODES, REPORT_KEYS, TrainConfig, evaluate, execute_run

__all__ = ["fold_seed", "run_single", "run_cv"]


def fold_seed(master_seed: int, fold_index: int) -> int:
    """Per-fold seed shared by all modes, derived from the master seed."""
    seq = np.random.SeedSequence((master_seed, fold_index))
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def mode_model_config(template: BackboneConfig, mode: str) -> BackboneConfig:
    d = template.to_dict()
    d["use_adapters"] = mode != "baseline_single_channel"
    return BackboneConfig.from_dict(d)


def run_single(data: DatasetContainer, model_config: BackboneConfig,
               config: TrainConfig, splits: dict, run_dir) -> dict:
    """Train one mode on one split assignment and write its artifacts."""
    started = time.perf_counter()
    model = build_model(mode_model_config(model_config, config.mode),
                        seed=config.seed)
    train_data = data.subset(splits["train"])
    val_data = data.subset(splits["val"])
    test_data = data.subset(splits["test"])
    result = execute_run(model, train_data, val_data, config)
    report = evaluate(result.model, test_data, result.scaler)
    write_run_artifacts(run_dir, result, config, report, splits,
                        wall_seconds=time.perf_counter() - started,
                        data_provenance=data.provenance)
    return report


def _cv_job(args) -> tuple:
    (data, model_config, options, mode, fold_index, splits, seed,
     run_dir) = args
    config = TrainConfig(mode=mode, seed=seed, **options)
    report = run_single(data, model_config, config, splits, run_dir)
    return fold_index, mode, report


def run_cv(data: DatasetContainer, out_dir, model_config: BackboneConfig,
           train_options: dict = None, folds: int = 5, seed: int = 0,
           modes=MODES, jobs: int = 1) -> dict:
    """Run every mode on every fold; returns the written summary."""
    for mode in modes:
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}")
    if len(set(modes)) != len(modes):
        raise ConfigError("modes must be distinct")
    if not isinstance(jobs, int) or jobs < 1:
        raise ConfigError(f"jobs must be a positive integer, got {jobs!r}")
    options = dict(train_options or {})
    options.pop("mode", None)
    options.pop("seed", None)
    out_dir = Path(out_dir)
    plan = plan_splits(len(data), SplitSpec(folds=folds, seed=seed))
    seeds = [fold_seed(seed, f) for f in range(folds)]

    tasks = []
    for fold_index, assignment in enumerate(plan.folds):
        splits = {"train": list(assignment.train), "val": list(assignment.val),
                  "test": list(assignment.test)}
        for mode in modes:
            run_dir = out_dir / f"fold{fold_index}" / mode
            tasks.append((data, model_config, options, mode, fold_index,
                          splits, seeds[fold_index], str(run_dir)))

    if jobs == 1:
        outcomes = [_cv_job(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_cv_job, tasks))

    per_fold = {mode: [None] * folds for mode in modes}
    for fold_index, mode, report in outcomes:
        per_fold[mode][fold_index] = report

    mean = {mode: {key: float(np.mean([r[key] for r in per_fold[mode]]))
                   for key in REPORT_KEYS} for mode in modes}
    wins = {}
    pairs = (("oucopula", "baseline_single_channel"),
             ("oucopula", "adapters"),
             ("adapters", "baseline_single_channel"))
    for better, worse in pairs:
        if better in per_fold and worse in per_fold:
            wins[f"{better}_vs_{worse}"] = sum(
                1 for f in range(folds)
                if per_fold[better][f]["ou_total"] < per_fold[worse][f]["ou_total"])

    summary = {
        "folds": folds,
        "seed": seed,
        "fold_seeds": seeds,
        "modes": list(modes),
        "mean": mean,
        "per_fold": per_fold,
        "wins": wins,
    }
    dump_json(summary, out_dir / "summary.json")
    charts_dir = out_dir / "charts"
    charts_dir.mkdir(parents=True, exist_ok=True)
    (charts_dir / "mean_mse.svg").write_text(
        mode_comparison_chart(mean, title=f"Mean test MSE over {folds} folds"))
    (charts_dir / "fold_spread.svg").write_text(
        fold_spread_chart(per_fold, title="Per-fold test MSE"))
    return summary
