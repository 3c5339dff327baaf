"""The command-line pipeline: gen, train, eval, cv, and determinism.

Everything the library does is reachable from the ``oucopula`` console
script. This demo shells out to it the way a user would, on a dataset
small enough that the whole tour takes well under a minute:

  1. gen    render a synthetic dataset to a single .oud file
  2. train  warm-up plus copula stage, writing a run directory
  3. eval   recompute metrics for the checkpoint on the held-out split
  4. cv     cross-validate two modes over 3 folds and summarize
  5. repeat gen+train with the same seeds and check the report is
     byte-identical

Run with: python3 demos/05_crossval_pipeline.py
"""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

FAST = [
    "--train.warmup_epochs", "2", "--train.copula_epochs", "1",
    "--train.batch_size", "8", "--model.stage_widths", "[8,16]",
]


def run(*args: str) -> str:
    cmd = ["oucopula", *args]
    print(f"$ {' '.join(cmd)}")
    proc = subprocess.run(cmd, capture_output=True, text=True)
    sys.stdout.write(proc.stdout)
    if proc.returncode != 0:
        sys.stderr.write(proc.stderr)
        raise SystemExit(f"command failed with exit code {proc.returncode}")
    return proc.stdout


with tempfile.TemporaryDirectory() as tmp:
    root = Path(tmp)
    data = root / "demo.oud"

    print("== 1. generate ==")
    run("gen", "--n", "30", "--res", "16", "--channels", "1",
        "--rho", "0.8", "--delta", "1.0", "--seed", "11", "--out", str(data))

    print()
    print("== 2. train (oucopula mode) ==")
    run_dir = root / "run"
    run("train", "--data", str(data), "--out", str(run_dir),
        "--mode", "oucopula", "--seed", "4", *FAST)
    print("artifacts:", sorted(p.name for p in run_dir.iterdir()))
    report = json.loads((run_dir / "report.json").read_text())
    print(f"test ou_total {report['ou_total']:.4f}"
          f"  (= ou_se {report['ou_se']:.4f} + ou_al {report['ou_al']:.4f})")

    print()
    print("== 3. eval the checkpoint on its test split ==")
    eval_dir = root / "eval"
    run("eval", "--data", str(data), "--checkpoint", str(run_dir / "checkpoint.oucm"),
        "--out", str(eval_dir), "--split", "test")

    print()
    print("== 4. cross-validate two modes over 3 folds ==")
    cv_dir = root / "cv"
    run("cv", "--data", str(data), "--out", str(cv_dir), "--folds", "3",
        "--seed", "4", "--modes", "adapters,oucopula", *FAST)
    summary = json.loads((cv_dir / "summary.json").read_text())
    for mode in summary["modes"]:
        print(f"{mode:10s} mean test ou_total {summary['mean'][mode]['ou_total']:.4f}"
              f" over {len(summary['per_fold'][mode])} folds")
    print("pairwise fold wins:", summary["wins"])

    print()
    print("== 5. determinism: same seeds, byte-identical report ==")
    rerun_data = root / "again.oud"
    rerun_dir = root / "run-again"
    run("gen", "--n", "30", "--res", "16", "--channels", "1",
        "--rho", "0.8", "--delta", "1.0", "--seed", "11", "--out", str(rerun_data))
    run("train", "--data", str(rerun_data), "--out", str(rerun_dir),
        "--mode", "oucopula", "--seed", "4", *FAST)
    same_data = data.read_bytes() == rerun_data.read_bytes()
    same_report = (run_dir / "report.json").read_bytes() == (rerun_dir / "report.json").read_bytes()
    print(f"dataset bytes identical: {same_data}")
    print(f"report.json bytes identical: {same_report}")
