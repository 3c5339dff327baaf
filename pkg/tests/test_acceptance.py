"""End-to-end checks of the package's headline guarantees.

Each test verifies one numbered guarantee at its stated tolerance and
prints a single pass line; run with -v to see one result line per
criterion.  The heavyweight criterion (5) trains 75 models on a 2000
patient 64x64 corpus and dominates the runtime of the whole suite.
"""

import json
import time

import numpy as np

from oucopula import (
    BackboneConfig,
    CopulaParams,
    GeneratorConfig,
    build_model,
    copula_nll,
    copula_density,
    estimate_params,
    generate,
)
from oucopula.backbone import EyeChannel
from oucopula.cli import main as cli_main
from oucopula.copula import copula_nll_per_sample
from oucopula.crossval import run_single
from oucopula.data import SplitSpec, plan_splits
from oucopula.gradcheck import run_suite
from oucopula.training import TrainConfig

# Reports produced by the expensive tests, re-checked by the identity
# criterion so it covers real training output and not just toy runs.
_REPORTS: list = []


def random_covariance(rng, p=4):
    a = rng.normal(size=(p, p))
    return a @ a.T + 0.5 * np.eye(p)


def random_correlation(rng, p=4):
    c = random_covariance(rng, p)
    d = 1.0 / np.sqrt(np.diag(c))
    return c * np.outer(d, d)


def params_from_covariance(cov):
    sigma = np.sqrt(np.diag(cov))
    gamma = cov / np.outer(sigma, sigma)
    return CopulaParams(sigma, gamma)


def rel_err(got, want):
    denom = np.maximum(np.abs(want), 1e-300)
    return float(np.max(np.abs(np.asarray(got) - np.asarray(want)) / denom))


def test_criterion_1_loss_matches_direct_inverse_oracle():
    rng = np.random.default_rng(90210)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        cov = random_covariance(rng)
        e = rng.normal(size=(7, 4)) @ np.linalg.cholesky(cov).T
        params = params_from_covariance(cov)

        sign, logdet = np.linalg.slogdet(cov)
        assert sign > 0
        quad = np.einsum("ij,ij->i", e, np.linalg.solve(cov, e.T).T)
        oracle = 0.5 * (4 * np.log(2.0 * np.pi) + logdet + quad)

        worst = max(worst, rel_err(copula_nll_per_sample(e, params), oracle))
        worst = max(worst, rel_err(copula_nll(e, params).data, oracle.mean()))
    elapsed = time.perf_counter() - t0
    assert worst <= 1e-10
    assert elapsed < 5.0
    print(f"criterion 1 PASS: max rel error {worst:.2e} in {elapsed:.2f}s")


def test_criterion_2_density_form_equals_exp_of_negative_loss():
    rng = np.random.default_rng(90211)
    worst = 0.0
    for _ in range(10):
        cov = random_covariance(rng)
        params = params_from_covariance(cov)
        sigma = np.sqrt(np.diag(cov))
        for _ in range(100):
            t = rng.normal(size=4) * sigma * rng.uniform(0.2, 2.5)
            density = copula_density(t, params)
            direct = float(np.exp(-copula_nll_per_sample(t[None, :], params)[0]))
            worst = max(worst, rel_err(density, direct))
    assert worst <= 1e-10
    print(f"criterion 2 PASS: max rel error {worst:.2e} over 1000 points")


def test_criterion_3_gradient_suite_passes_at_tolerance():
    t0 = time.perf_counter()
    results = run_suite()
    elapsed = time.perf_counter() - t0
    names = [r.name for r in results]
    assert "model_warmup_mse" in names
    assert "model_copula_nll" in names
    worst = max(r.max_rel_error for r in results)
    failed = [r.name for r in results if not r.passed]
    assert not failed, f"finite-difference mismatch in {failed}"
    assert worst < 1e-6
    assert elapsed < 120.0
    print(f"criterion 3 PASS: {len(results)} checks, max rel error "
          f"{worst:.2e} in {elapsed:.1f}s")


def test_criterion_4_parameter_recovery_from_sampled_residuals():
    rng = np.random.default_rng(90231)
    worst_sigma = 0.0
    worst_gamma = 0.0
    for _ in range(10):
        sigma_true = rng.uniform(0.5, 2.0, size=4)
        gamma_true = random_correlation(rng)
        cov = np.outer(sigma_true, sigma_true) * gamma_true
        e = rng.normal(size=(5000, 4)) @ np.linalg.cholesky(cov).T
        est = estimate_params(e)
        worst_sigma = max(worst_sigma,
                          float(np.max(np.abs(est.sigma / sigma_true - 1.0))))
        worst_gamma = max(worst_gamma,
                          float(np.max(np.abs(est.gamma - gamma_true))))
    assert worst_sigma <= 0.03
    assert worst_gamma <= 0.03
    print(f"criterion 4 PASS: sigma within {worst_sigma:.3%}, "
          f"correlation within {worst_gamma:.4f}")


def test_criterion_5_mode_ordering_across_master_seeds(tmp_path):
    t0 = time.perf_counter()
    corpus = tmp_path / "corpus.oud"
    assert cli_main(["gen", "--n", "2000", "--res", "64", "--channels", "1",
                     "--rho", "0.8", "--delta", "1.0", "--seed", "11",
                     "--out", str(corpus)]) == 0
    flags = ["--model.stem_kernel", "3", "--model.stem_stride", "4",
             "--model.stage_widths", "[8,16]", "--model.blocks_per_stage", "1",
             "--train.warmup_epochs", "15", "--train.copula_epochs", "8",
             "--train.batch_size", "128", "--train.lr_warmup", "0.002",
             "--train.lr_copula", "0.0002"]

    master_seeds = (101, 202, 303, 404, 505)
    coupled_wins = 0
    adapter_wins = 0
    lines = []
    for seed in master_seeds:
        out = tmp_path / f"seed{seed}"
        assert cli_main(["cv", "--data", str(corpus), "--out", str(out),
                         "--folds", "5", "--seed", str(seed)] + flags) == 0
        summary = json.loads((out / "summary.json").read_text())
        mean = {m: summary["mean"][m]["ou_total"] for m in summary["modes"]}
        for reports in summary["per_fold"].values():
            _REPORTS.extend(reports)
        coupled_wins += mean["oucopula"] <= mean["adapters"]
        adapter_wins += mean["adapters"] <= mean["baseline_single_channel"]
        lines.append(f"  seed {seed}: baseline {mean['baseline_single_channel']:.4f}"
                     f"  adapters {mean['adapters']:.4f}"
                     f"  oucopula {mean['oucopula']:.4f}")
    elapsed = time.perf_counter() - t0
    assert coupled_wins >= 4, "\n".join(lines)
    assert adapter_wins >= 4, "\n".join(lines)
    assert elapsed < 3600.0
    print("criterion 5 PASS: oucopula<=adapters in "
          f"{coupled_wins}/5 seeds, adapters<=baseline in {adapter_wins}/5, "
          f"{elapsed/60:.1f} min\n" + "\n".join(lines))


def check_identities(report):
    assert abs(report["ou_total"] - (report["os_total"] + report["od_total"])) < 1e-9
    assert abs(report["ou_total"] - (report["ou_se"] + report["ou_al"])) < 1e-9


def test_criterion_6_every_report_satisfies_sum_identities(tmp_path):
    data = generate(GeneratorConfig(n_patients=30, resolution=16, channels=1,
                                    seed=4))
    fold = plan_splits(len(data), SplitSpec(folds=5, seed=1)).folds[0]
    config = BackboneConfig(resolution=16, channels=1, stage_widths=(8, 16),
                            blocks_per_stage=1)
    report = run_single(
        data, config,
        TrainConfig(mode="oucopula", warmup_epochs=1, copula_epochs=1,
                    batch_size=4, seed=0),
        {"train": fold.train, "val": fold.val, "test": fold.test},
        tmp_path / "run")
    checked = [report] + _REPORTS
    for rep in checked:
        check_identities(rep)
    print(f"criterion 6 PASS: identities hold in {len(checked)} reports")


def test_criterion_7_adapter_zeroing_isolation_and_size():
    config = BackboneConfig(resolution=64, channels=1, stem_kernel=3,
                            stem_stride=4, stage_widths=(8, 16),
                            blocks_per_stage=1, use_adapters=True)
    model = build_model(config, seed=33)
    x = np.random.default_rng(2).uniform(0.1, 0.9, size=(3, 1, 64, 64))

    left = model.forward(x, EyeChannel.OS).data
    right = model.forward(x, EyeChannel.OD).data
    assert np.array_equal(left, right)

    for p in model.parameters():
        if ".os." in p.path and p.value.ndim == 4:
            p.value.data += 0.5
    right_after = model.forward(x, EyeChannel.OD).data
    left_after = model.forward(x, EyeChannel.OS).data
    assert np.array_equal(right_after, right)
    assert not np.array_equal(left_after, left)

    backbone_n = sum(p.value.size for p in model.parameters()
                     if ".os." not in p.path and ".od." not in p.path)
    adapter_n = sum(p.value.size for p in model.parameters()
                    if ".os." in p.path or ".od." in p.path)
    ratio = adapter_n / backbone_n
    assert ratio < 0.15
    print(f"criterion 7 PASS: zero-init channels identical, channels isolated, "
          f"adapter share {ratio:.1%}")


def test_criterion_8_pipeline_reruns_are_byte_identical(tmp_path):
    fast = ["--train.warmup_epochs", "2", "--train.copula_epochs", "1",
            "--train.batch_size", "8", "--model.stage_widths", "[4,8]"]

    def pipeline(root):
        root.mkdir()
        data = root / "d.oud"
        assert cli_main(["gen", "--n", "24", "--res", "16", "--channels", "1",
                         "--seed", "9", "--out", str(data)]) == 0
        assert cli_main(["train", "--data", str(data), "--out",
                         str(root / "train"), "--mode", "oucopula",
                         "--seed", "9"] + fast) == 0
        assert cli_main(["eval", "--data", str(data),
                         "--checkpoint", str(root / "train" / "checkpoint.oucm"),
                         "--out", str(root / "eval"), "--split", "test"]) == 0
        return ((root / "train" / "report.json").read_bytes(),
                (root / "eval" / "report.json").read_bytes())

    first = pipeline(tmp_path / "a")
    second = pipeline(tmp_path / "b")
    assert first[0] == second[0]
    assert first[1] == second[1]
    check_identities(json.loads(first[1]))
    print("criterion 8 PASS: gen/train/eval reruns byte-identical")
