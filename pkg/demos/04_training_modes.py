"""Training modes side by side: warm-up, the copula stage, and adapters.

Three ways to train the paired-eye regressor on the same data:

  baseline_single_channel  shared trunk only, eyes pooled into one stream
  adapters                 per-eye residual adapters, plain MSE
  oucopula                 adapters plus a second stage that minimizes the
                           Gaussian copula NLL of the 4 correlated labels

The run is deliberately tiny (small images, few epochs) so it finishes in
seconds; the point is the machinery, not the scores. Along the way:
phase logs with best-epoch selection, the copula fitted from warm-up
residuals, the nine-entry evaluation report and its additivity
identities, the zero-initialized adapters acting as the identity, and
the adapter parameter census.

Run with: python3 demos/04_training_modes.py
"""

import numpy as np

from oucopula.backbone import BackboneConfig, BiChannelModel, EyeChannel, build_model
from oucopula.data import GeneratorConfig, SplitSpec, generate, plan_splits
from oucopula.training import MODES, TrainConfig, evaluate, execute_run

print("== setup: one dataset, one split, three modes ==")
data = generate(GeneratorConfig(n_patients=90, resolution=16, channels=1, seed=5))
fold = plan_splits(len(data), SplitSpec(folds=1, seed=2)).folds[0]
train, val, test = (data.subset(idx) for idx in (fold.train, fold.val, fold.test))
print(f"patients: {len(train)} train / {len(val)} val / {len(test)} test")

arch = dict(resolution=16, channels=1, stage_widths=(8, 16), blocks_per_stage=1)
reports = {}
for mode in MODES:
    config = TrainConfig(mode=mode, warmup_epochs=4, copula_epochs=3,
                         batch_size=16, lr_warmup=3e-3, lr_copula=3e-4, seed=1)
    model = build_model(BackboneConfig(use_adapters=(mode != MODES[0]), **arch), seed=1)
    result = execute_run(model, train, val, config)

    log = result.warmup_log
    print(f"\n-- {mode} --")
    print(f"warm-up train loss {log.train_loss[0]:.4f} -> {log.train_loss[-1]:.4f},"
          f" best epoch {log.best_epoch} ({log.metric_name} {log.best_val_metric:.4f})")
    if result.copula is not None:
        print(f"copula fitted from warm-up residuals: sigma {np.round(result.copula.sigma, 3)}")
        print("gamma row 0:", np.round(result.copula.gamma[0], 3).tolist())
        clog = result.copula_log
        print(f"copula stage {clog.metric_name} {clog.val_metric[0]:.4f} ->"
              f" best {clog.best_val_metric:.4f} at epoch {clog.best_epoch}")
    reports[mode] = evaluate(result.model, test, result.scaler)

print()
print("== evaluation reports (test split, original label units) ==")
for mode, rep in reports.items():
    print(f"{mode:24s} ou_total {rep['ou_total']:.4f}  "
          f"(ou_se {rep['ou_se']:.4f}, ou_al {rep['ou_al']:.4f})")

rep = reports["oucopula"]
print("\nadditivity identities (hold for every report):")
print(f"  ou_total - (os_total + od_total) = {rep['ou_total'] - (rep['os_total'] + rep['od_total']):+.2e}")
print(f"  ou_total - (ou_se   + ou_al)     = {rep['ou_total'] - (rep['ou_se'] + rep['ou_al']):+.2e}")

print()
print("== zero-initialized adapters are the identity ==")
fresh: BiChannelModel = build_model(BackboneConfig(use_adapters=True, **arch), seed=7)
x = np.random.default_rng(0).uniform(0.2, 0.8, size=(3, 1, 16, 16))
left = fresh.forward(x, EyeChannel.OS, train=False)
right = fresh.forward(x, EyeChannel.OD, train=False)
print(f"same image through both channels, untrained: equal bit for bit ="
      f" {np.array_equal(left.data, right.data)}")

census = fresh.census()
share = census["adapters"] / census["total"]
print(f"parameter census: {census['total']} total, {census['adapters']} in adapters"
      f" ({share:.1%}, budget < 15%)")
