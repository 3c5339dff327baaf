import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from oucopula import (
    BackboneConfig,
    ConfigError,
    GeneratorConfig,
    TrainConfig,
    evaluate,
    generate,
    load_checkpoint,
    run_cv,
    run_single,
)
from oucopula.charts import PANEL_KEYS
from oucopula.crossval import fold_seed, mode_model_config
from oucopula.training import REPORT_KEYS, LabelScaler

BACKBONE = BackboneConfig(resolution=16, channels=1, stage_widths=(4, 8),
                          blocks_per_stage=2)


def tiny_data(n=15, seed=1):
    return generate(GeneratorConfig(n_patients=n, resolution=16, channels=1,
                                    seed=seed))


def fast_options():
    return {"warmup_epochs": 1, "copula_epochs": 1, "batch_size": 4}


def test_fold_seed_is_deterministic_and_fold_specific():
    assert fold_seed(3, 0) == fold_seed(3, 0)
    assert fold_seed(3, 0) != fold_seed(3, 1)
    assert fold_seed(4, 0) != fold_seed(3, 0)


def test_mode_model_config_flips_adapters_only():
    base = mode_model_config(BACKBONE, "baseline_single_channel")
    assert base.use_adapters is False
    full = mode_model_config(BACKBONE, "oucopula")
    assert full.use_adapters is True
    assert base.stage_widths == full.stage_widths == BACKBONE.stage_widths


def test_run_single_writes_all_artifacts(tmp_path):
    data = tiny_data()
    splits = {"train": list(range(10)), "val": [10, 11, 12], "test": [13, 14]}
    config = TrainConfig(mode="oucopula", seed=5, **fast_options())
    report = run_single(data, BACKBONE, config, splits, tmp_path / "run")
    for name in ("run.json", "copula.json", "checkpoint.oucm", "report.json"):
        assert (tmp_path / "run" / name).exists()
    assert (tmp_path / "run" / "charts" / "report.svg").exists()
    stored = json.loads((tmp_path / "run" / "report.json").read_text())
    assert stored == report
    run_info = json.loads((tmp_path / "run" / "run.json").read_text())
    assert run_info["config"]["mode"] == "oucopula"
    assert run_info["splits"]["test"] == [13, 14]
    assert run_info["stages"]["copula"]["metric_name"] == "val_copula_nll"
    copula = json.loads((tmp_path / "run" / "copula.json").read_text())
    assert set(copula) == {"sigma", "gamma", "repaired"}


def test_adapterless_mode_writes_null_copula(tmp_path):
    data = tiny_data()
    splits = {"train": list(range(10)), "val": [10, 11, 12], "test": [13, 14]}
    config = TrainConfig(mode="adapters", seed=5, **fast_options())
    run_single(data, BACKBONE, config, splits, tmp_path / "run")
    assert json.loads((tmp_path / "run" / "copula.json").read_text()) is None


def test_checkpoint_reevaluation_is_bit_identical(tmp_path):
    data = tiny_data(seed=2)
    splits = {"train": list(range(10)), "val": [10, 11, 12], "test": [13, 14]}
    config = TrainConfig(mode="oucopula", seed=6, **fast_options())
    run_single(data, BACKBONE, config, splits, tmp_path / "run")
    model, copula, extra = load_checkpoint(tmp_path / "run" / "checkpoint.oucm")
    assert copula is not None
    scaler = LabelScaler.from_dict(extra["scaler"])
    report = evaluate(model, data.subset(extra["splits"]["test"]), scaler)
    raw = (tmp_path / "run" / "report.json").read_text()
    assert json.dumps(report, sort_keys=True, indent=2) + "\n" == raw


def test_run_cv_layout_and_summary(tmp_path):
    data = tiny_data(seed=3)
    summary = run_cv(data, tmp_path, BACKBONE, train_options=fast_options(),
                     folds=3, seed=9)
    reports = sorted(tmp_path.glob("fold*/*/report.json"))
    assert len(reports) == 9
    assert (tmp_path / "summary.json").exists()
    saved = json.loads((tmp_path / "summary.json").read_text())
    assert saved == summary

    # identical fold plans and seeds across the three modes
    for fold in range(3):
        infos = [json.loads((tmp_path / f"fold{fold}" / mode / "run.json")
                            .read_text())
                 for mode in summary["modes"]]
        assert all(i["splits"] == infos[0]["splits"] for i in infos)
        assert all(i["config"]["seed"] == infos[0]["config"]["seed"]
                   for i in infos)

    for mode, reports_list in summary["per_fold"].items():
        assert len(reports_list) == 3
        for rep in reports_list:
            assert set(rep) == set(REPORT_KEYS)
    for mode, mean in summary["mean"].items():
        assert abs(mean["ou_total"]
                   - (mean["os_total"] + mean["od_total"])) < 1e-9
        assert abs(mean["ou_total"] - (mean["ou_se"] + mean["ou_al"])) < 1e-9
    assert set(summary["wins"]) == {
        "oucopula_vs_baseline_single_channel",
        "oucopula_vs_adapters",
        "adapters_vs_baseline_single_channel",
    }
    for count in summary["wins"].values():
        assert 0 <= count <= 3


def test_run_cv_charts_are_valid_svg(tmp_path):
    data = tiny_data(seed=4)
    run_cv(data, tmp_path, BACKBONE, train_options=fast_options(),
           folds=3, seed=2, modes=("adapters", "oucopula"))
    for name in ("mean_mse.svg", "fold_spread.svg"):
        text = (tmp_path / "charts" / name).read_text()
        root = ET.fromstring(text)
        assert root.tag.endswith("svg")
        for row in PANEL_KEYS:
            for key in row:
                assert key in text
        assert "adapters" in text and "oucopula" in text


def test_run_cv_parallel_output_is_byte_identical(tmp_path):
    data = tiny_data(seed=5)
    for jobs, name in ((1, "serial"), (2, "parallel")):
        run_cv(data, tmp_path / name, BACKBONE, train_options=fast_options(),
               folds=3, seed=11, modes=("adapters", "oucopula"), jobs=jobs)
    for rel in sorted(p.relative_to(tmp_path / "serial")
                      for p in (tmp_path / "serial").rglob("*")
                      if p.is_file() and p.name != "run.json"):
        a = (tmp_path / "serial" / rel).read_bytes()
        b = (tmp_path / "parallel" / rel).read_bytes()
        assert a == b, f"{rel} differs between jobs=1 and jobs=2"


def test_run_cv_validation():
    data = tiny_data(seed=6)
    with pytest.raises(ConfigError):
        run_cv(data, "/tmp/unused", BACKBONE, folds=3, modes=("resnet",))
    with pytest.raises(ConfigError):
        run_cv(data, "/tmp/unused", BACKBONE, folds=3,
               modes=("adapters", "adapters"))
    with pytest.raises(ConfigError):
        run_cv(data, "/tmp/unused", BACKBONE, folds=3, jobs=0)
