"""Run artifact directory layout.

Every training run writes, under its output directory: ``run.json`` (the
effective configuration, stage logs, and wall clock), ``copula.json``
(estimated parameters, or ``null`` for modes without a copula stage),
``checkpoint.oucm`` (model weights plus everything needed to re-evaluate),
``report.json`` (exactly the nine MSE keys), and ``charts/report.svg``.
JSON files are written with sorted keys and a trailing newline so
identical runs produce identical bytes.
"""

import json
from pathlib import Path

from .backbone import BiChannelModel
from .charts import report_chart
from .checkpoint import save_checkpoint
from .errors import FormatError
from .training import REPORT_KEYS, RunResult, TrainConfig

__all__ = ["dump_json", "load_json", "write_run_artifacts", "read_report"]


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path} is not valid JSON: {exc}") from exc


def checkpoint_extra(config: TrainConfig, result: RunResult, splits) -> dict:
    return {
        "train_config": config.to_dict(),
        "scaler": result.scaler.to_dict(),
        "splits": {k: [int(i) for i in v] for k, v in splits.items()},
    }


def write_run_artifacts(run_dir, result: RunResult, config: TrainConfig,
                        report: dict, splits: dict, wall_seconds: float,
                        data_provenance: dict) -> None:
    run_dir = Path(run_dir)
    (run_dir / "charts").mkdir(parents=True, exist_ok=True)
    model: BiChannelModel = result.model
    run_info = {
        "config": config.to_dict(),
        "model": model.config.to_dict(),
        "data": data_provenance,
        "splits": {k: [int(i) for i in v] for k, v in splits.items()},
        "stages": {
            "warmup": result.warmup_log.to_dict(),
            "copula": result.copula_log.to_dict() if result.copula_log else None,
        },
        "wall_clock_seconds": float(wall_seconds),
    }
    dump_json(run_info, run_dir / "run.json")
    dump_json(result.copula.to_dict() if result.copula else None,
              run_dir / "copula.json")
    save_checkpoint(model, run_dir / "checkpoint.oucm", copula=result.copula,
                    extra=checkpoint_extra(config, result, splits))
    dump_json(report, run_dir / "report.json")
    (run_dir / "charts" / "report.svg").write_text(
        report_chart(report, title="MSE report"))


def read_report(path) -> dict:
    report = load_json(path)
    if not isinstance(report, dict) or set(report) != set(REPORT_KEYS):
        raise FormatError(f"{path} is not a nine-key MSE report")
    return report
