"""Command-line entry point.

Subcommands: ``gen`` (synthesize a paired-eye dataset file), ``train``
(one training mode on one split), ``eval`` (recompute metrics for a saved
checkpoint), ``cv`` (k-fold cross-validation over the training modes),
``estimate`` (copula parameters from a residual CSV), ``gradcheck``
(finite-difference self-test), ``version``.

Exit codes: 0 success, 1 usage or configuration error, 2 data or
file-format error, 3 numerical failure. Diagnostics go to standard error;
results go to files.

Configuration precedence for ``train`` and ``cv``: built-in defaults, then
the ``--config`` JSON file, then ``--<section>.<key> <value>`` override
flags, e.g. ``--train.warmup_epochs 5`` or ``--model.stage_widths [8,16]``.
Sections: ``train`` (TrainConfig fields), ``model`` (architecture fields;
``resolution`` and ``channels`` default to the dataset's and must match it,
``use_adapters`` and ``outputs`` are derived and cannot be set), ``split``
(``train``/``val``/``test`` fractions and ``seed``, train subcommand only).
Unknown sections or keys are rejected. Override values are parsed as JSON
where possible, else taken as strings. A seed given neither as a flag nor
in the config file falls back to the ``OUCOPULA_SEED`` environment
variable, then to 0.
"""

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .artifacts import dump_json, load_json
from .backbone import BackboneConfig
from .charts import report_chart
from .checkpoint import load_checkpoint
from .copula import LABEL_COLUMNS, estimate_params
from .crossval import run_cv, run_single
from .data import (
    GeneratorConfig,
    SplitSpec,
    correlation_template,
    generate,
    plan_splits,
)
from .dataio import read_container, write_container
from .errors import ConfigError, FormatError, NumericalError, ShapeError
from .gradcheck import run_suite
from .training import MODES, LabelScaler, TrainConfig, evaluate

__all__ = ["main", "entry"]

_TRAIN_KEYS = frozenset(TrainConfig.__slots__)
_MODEL_KEYS = frozenset((
    "resolution", "channels", "stem_kernel", "stem_stride", "stage_widths",
    "blocks_per_stage", "adapter_width_ratio", "per_channel_head",
))
_MODEL_DERIVED = frozenset(("use_adapters", "outputs"))
_SPLIT_KEYS = frozenset(("train", "val", "test", "seed"))
_SECTIONS = {"train": _TRAIN_KEYS, "model": _MODEL_KEYS, "split": _SPLIT_KEYS}


class _UsageError(Exception):
    def __init__(self, message: str, usage: str):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message, self.format_usage())


def _build_parser() -> _Parser:
    parser = _Parser(prog="oucopula", description=(
        "Bi-channel convolutional regression with a Gaussian copula loss."))
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    gen = sub.add_parser("gen", help="synthesize a paired-eye dataset file")
    gen.add_argument("--n", type=int, required=True, help="number of patients")
    gen.add_argument("--res", type=int, default=64, help="image side length")
    gen.add_argument("--channels", type=int, default=3, help="image channels")
    gen.add_argument("--rho", type=float, default=0.8,
                     help="same-label cross-eye noise correlation")
    gen.add_argument("--delta", type=float, default=1.0,
                     help="interocular asymmetry strength")
    gen.add_argument("--seed", type=int, default=None,
                     help="generator seed (default: OUCOPULA_SEED, then 0)")
    gen.add_argument("--out", required=True, help="output dataset file")

    train = sub.add_parser("train", help="train one mode on one split")
    train.add_argument("--data", required=True, help="dataset file")
    train.add_argument("--out", required=True, help="run output directory")
    train.add_argument("--mode", choices=MODES, default=None,
                       help="training mode (default: oucopula)")
    train.add_argument("--seed", type=int, default=None,
                       help="training seed (default: config file, "
                            "OUCOPULA_SEED, then 0)")
    train.add_argument("--config", default=None, help="JSON config file")

    ev = sub.add_parser("eval", help="recompute metrics for a checkpoint")
    ev.add_argument("--data", required=True, help="dataset file")
    ev.add_argument("--checkpoint", required=True, help="checkpoint file")
    ev.add_argument("--out", required=True, help="output directory")
    ev.add_argument("--split", choices=("all", "train", "val", "test"),
                    default="all",
                    help="patients to evaluate: all, or a split recorded "
                         "in the checkpoint")

    cv = sub.add_parser("cv", help="cross-validate the training modes")
    cv.add_argument("--data", required=True, help="dataset file")
    cv.add_argument("--out", required=True, help="output directory")
    cv.add_argument("--folds", type=int, default=5, help="number of folds")
    cv.add_argument("--seed", type=int, default=None,
                    help="master seed (default: config file, "
                         "OUCOPULA_SEED, then 0)")
    cv.add_argument("--jobs", type=int, default=1,
                    help="worker processes (output is identical for any N)")
    cv.add_argument("--modes", default=",".join(MODES),
                    help="comma-separated subset of modes to run")
    cv.add_argument("--config", default=None, help="JSON config file")

    est = sub.add_parser("estimate", help="copula parameters from a CSV")
    est.add_argument("--data", required=True,
                     help="CSV of residuals, 4 numeric columns, "
                          "optional header")
    est.add_argument("--out", required=True, help="output JSON file")

    sub.add_parser("gradcheck", help="finite-difference self-test")
    sub.add_parser("version", help="print the package version")
    return parser


# ------------------------------------------------------------- configuration


def _resolve_seed(flag_value, file_value) -> int:
    if flag_value is not None:
        return flag_value
    if file_value is not None:
        if not isinstance(file_value, int) or file_value < 0:
            raise ConfigError(f"config seed must be a nonnegative integer, "
                              f"got {file_value!r}")
        return file_value
    env = os.environ.get("OUCOPULA_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"OUCOPULA_SEED must be an integer, got {env!r}")
    return 0


def _check_section_keys(section: str, keys) -> None:
    if section not in _SECTIONS:
        raise ConfigError(f"unknown config section {section!r}; "
                          f"expected one of {sorted(_SECTIONS)}")
    for key in keys:
        if section == "model" and key in _MODEL_DERIVED:
            raise ConfigError(
                f"model.{key} is derived from the mode and dataset and "
                "cannot be configured")
        if key not in _SECTIONS[section]:
            raise ConfigError(f"unknown config key {section}.{key}")


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    raw = load_json(path)
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    for section, values in raw.items():
        if not isinstance(values, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        _check_section_keys(section, values)
    return raw


def _parse_overrides(tokens) -> dict:
    result = {}
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if not token.startswith("--") or "." not in token:
            raise ConfigError(f"unrecognized argument {token!r}; overrides "
                              "look like --section.key value")
        if i + 1 >= len(tokens):
            raise ConfigError(f"override {token!r} is missing a value")
        section, _, key = token[2:].partition(".")
        _check_section_keys(section, [key])
        value = tokens[i + 1]
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            pass
        result.setdefault(section, {})[key] = value
        i += 2
    return result


def _merged_config(args, overrides) -> dict:
    merged = {"train": {}, "model": {}, "split": {}}
    for source in (_load_config_file(args.config), _parse_overrides(overrides)):
        for section, values in source.items():
            merged[section].update(values)
    return merged


def _model_config_from(merged_model: dict, image_shape,
                       use_adapters: bool) -> BackboneConfig:
    channels, height, width = image_shape
    if height != width:
        raise FormatError(f"images must be square, got {height}x{width}")
    spec = dict(merged_model)
    for key, value in (("resolution", height), ("channels", channels)):
        given = spec.setdefault(key, value)
        if given != value:
            raise ConfigError(
                f"model.{key} {given} does not match the dataset's {value}")
    tupled = spec.get("stage_widths")
    if isinstance(tupled, list):
        spec["stage_widths"] = tuple(tupled)
    spec["use_adapters"] = use_adapters
    return BackboneConfig(**spec)


def _train_config_from(merged_train: dict, mode, seed_flag) -> TrainConfig:
    spec = dict(merged_train)
    file_mode = spec.pop("mode", None)
    if mode is None:
        mode = file_mode if file_mode is not None else "oucopula"
    seed = _resolve_seed(seed_flag, spec.pop("seed", None))
    return TrainConfig(mode=mode, seed=seed, **spec)


def _split_spec_from(merged_split: dict, folds: int, default_seed: int) -> SplitSpec:
    spec = dict(merged_split)
    seed = spec.pop("seed", default_seed)
    fractions = {k: spec[k] for k in ("train", "val", "test") if k in spec}
    return SplitSpec(folds=folds, seed=seed, **fractions)


# ---------------------------------------------------------------- subcommands


def _cmd_gen(args, overrides) -> int:
    if overrides:
        raise ConfigError(f"unrecognized arguments: {' '.join(overrides)}")
    seed = _resolve_seed(args.seed, None)
    config = GeneratorConfig(
        n_patients=args.n, resolution=args.res, channels=args.channels,
        gamma_star=correlation_template(rho_cross=args.rho),
        delta=args.delta, seed=seed)
    data = generate(config)
    write_container(data, args.out)
    print(f"wrote {len(data)} patients to {args.out}")
    return 0


def _cmd_train(args, overrides) -> int:
    merged = _merged_config(args, overrides)
    data = read_container(args.data)
    config = _train_config_from(merged["train"], args.mode, args.seed)
    model_config = _model_config_from(
        merged["model"], data.image_shape,
        use_adapters=config.mode != "baseline_single_channel")
    split_spec = _split_spec_from(merged["split"], folds=1,
                                  default_seed=config.seed)
    plan = plan_splits(len(data), split_spec)
    assignment = plan.folds[0]
    splits = {"train": list(assignment.train), "val": list(assignment.val),
              "test": list(assignment.test)}
    report = run_single(data, model_config, config, splits, args.out)
    print(f"wrote run artifacts to {args.out} "
          f"(test ou_total {report['ou_total']:.6g})")
    return 0


def _cmd_eval(args, overrides) -> int:
    if overrides:
        raise ConfigError(f"unrecognized arguments: {' '.join(overrides)}")
    data = read_container(args.data)
    model, _, extra = load_checkpoint(args.checkpoint)
    scaler = LabelScaler.from_dict(extra["scaler"])
    if args.split == "all":
        subset = data
    else:
        indices = extra.get("splits", {}).get(args.split)
        if indices is None:
            raise ConfigError(
                f"checkpoint records no {args.split!r} split")
        if indices and max(indices) >= len(data):
            raise ConfigError(
                f"checkpoint {args.split!r} split indexes past the dataset "
                f"(n={len(data)})")
        subset = data.subset(indices)
    report = evaluate(model, subset, scaler)
    out = Path(args.out)
    (out / "charts").mkdir(parents=True, exist_ok=True)
    dump_json(report, out / "report.json")
    (out / "charts" / "report.svg").write_text(
        report_chart(report, title="MSE report"))
    print(f"wrote report to {out / 'report.json'} "
          f"(ou_total {report['ou_total']:.6g})")
    return 0


def _cmd_cv(args, overrides) -> int:
    merged = _merged_config(args, overrides)
    if merged["split"]:
        raise ConfigError("cv derives splits from --folds; "
                          "the split section applies to train only")
    data = read_container(args.data)
    modes = tuple(m for m in args.modes.split(",") if m)
    seed = _resolve_seed(args.seed, merged["train"].pop("seed", None))
    merged["train"].pop("mode", None)
    model_config = _model_config_from(merged["model"], data.image_shape,
                                      use_adapters=True)
    summary = run_cv(data, args.out, model_config,
                     train_options=merged["train"], folds=args.folds,
                     seed=seed, modes=modes, jobs=args.jobs)
    print(f"wrote {args.folds * len(modes)} runs and summary.json to {args.out}")
    for pair, count in summary["wins"].items():
        print(f"{pair}: {count}/{args.folds} folds")
    return 0


def _read_residual_csv(path) -> np.ndarray:
    rows = []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    reader = csv.reader(text.splitlines())
    for line_no, fields in enumerate(reader, start=1):
        if not fields:
            continue
        if len(fields) != 4:
            raise FormatError(
                f"{path} line {line_no}: expected 4 fields, got {len(fields)}")
        try:
            rows.append([float(f) for f in fields])
        except ValueError as exc:
            if line_no == 1:
                continue  # header row naming the columns
            raise FormatError(f"{path} line {line_no}: {exc}") from exc
    if not rows:
        raise FormatError(f"{path} contains no numeric rows")
    return np.asarray(rows, dtype=np.float64)


def _cmd_estimate(args, overrides) -> int:
    if overrides:
        raise ConfigError(f"unrecognized arguments: {' '.join(overrides)}")
    residuals = _read_residual_csv(args.data)
    params = estimate_params(residuals, column_names=LABEL_COLUMNS)
    dump_json(params.to_dict(), args.out)
    print(f"wrote copula parameters to {args.out}")
    return 0


def _cmd_gradcheck(args, overrides) -> int:
    if overrides:
        raise ConfigError(f"unrecognized arguments: {' '.join(overrides)}")
    results = run_suite()
    worst = 0.0
    failed = []
    for r in results:
        status = "pass" if r.passed else "FAIL"
        print(f"{r.name:<24} max rel error {r.max_rel_error:.3e} "
              f"(tolerance {r.tolerance:.0e}) {status}")
        worst = max(worst, r.max_rel_error)
        if not r.passed:
            failed.append(r.name)
    print(f"overall max rel error {worst:.3e}")
    if failed:
        raise NumericalError(f"gradient checks failed: {', '.join(failed)}")
    return 0


# --------------------------------------------------------------------- entry


def main(argv=None) -> int:
    parser = _build_parser()
    if argv is None:
        argv = sys.argv[1:]
    handlers = {
        "gen": _cmd_gen,
        "train": _cmd_train,
        "eval": _cmd_eval,
        "cv": _cmd_cv,
        "estimate": _cmd_estimate,
        "gradcheck": _cmd_gradcheck,
    }
    try:
        try:
            args, overrides = parser.parse_known_args(argv)
        except SystemExit as exc:  # --help
            return int(exc.code or 0)
        if args.command is None:
            raise _UsageError("a subcommand is required", parser.format_usage())
        if args.command == "version":
            if overrides:
                raise ConfigError(
                    f"unrecognized arguments: {' '.join(overrides)}")
            print(__version__)
            return 0
        return handlers[args.command](args, overrides)
    except _UsageError as exc:
        print(exc.usage, file=sys.stderr, end="")
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
