"""Three-stage training pipeline plus the nine-way MSE evaluation.

Stage 1 (``warmup``) minimizes the mean over patients of the summed squared
error across all labels with Adam; each iteration feeds both eyes of the
same patients through the shared backbone. Stage 2 (``fit_copula``)
computes eval-mode residuals on the training data and estimates the
marginal scales and the score correlation matrix. Stage 3
(``copula_train``) resumes from the stage-1 snapshot and minimizes the
copula negative log likelihood of the 4-vector residuals with the
estimated parameters held fixed.

Mode semantics: ``baseline_single_channel`` flattens each patient into two
independent single-eye samples (adapter-free model, 2 labels per sample);
``adapters`` stops after stage 1; ``oucopula`` runs all three stages.

Conventions documented here because results depend on them: labels are
z-scored per column with training-split statistics when standardization is
on (reports are always in original units); each stage tracks the best
validation snapshot, including the state before its first epoch, scored by
total OU MSE for warm-up and by validation copula NLL for the copula
stage; each stage uses a fresh Adam state; a trailing batch of size 1 is
merged into its predecessor because batch normalization needs two samples;
evaluation always runs in fixed-size chunks so results do not depend on
the caller's split sizes.
"""

import numpy as np

from .backbone import BiChannelModel, EyeChannel
from .copula import CopulaParams, copula_nll, estimate_params
from .data import DatasetContainer
from .errors import ConfigError, NumericalError, ShapeError
from .ops import concat_columns, mean_all, mul, scale, sub
from .optim import AdamState, adam_step
from .tensor import GradTape, Tensor, backward

__all__ = [
    "MODES",
    "TrainConfig",
    "LabelScaler",
    "PhaseLog",
    "warmup",
    "fit_copula",
    "copula_train",
    "evaluate",
    "predictions",
    "residuals",
    "execute_run",
    "RunResult",
]

MODES = ("baseline_single_channel", "adapters", "oucopula")

# evaluation chunk size; fixed so chunking never depends on split sizes
_EVAL_CHUNK = 256

REPORT_KEYS = (
    "os_se", "os_al", "od_se", "od_al",
    "os_total", "od_total", "ou_se", "ou_al", "ou_total",
)


class TrainConfig:
    """Hyperparameters for one training run."""

    __slots__ = ("mode", "warmup_epochs", "copula_epochs", "batch_size",
                 "lr_warmup", "lr_copula", "seed", "standardize")

    def __init__(self, mode: str, warmup_epochs: int = 40,
                 copula_epochs: int = 20, batch_size: int = 32,
                 lr_warmup: float = 1e-3, lr_copula: float = 1e-4,
                 seed: int = 0, standardize: bool = True):
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
        for name, value in (("warmup_epochs", warmup_epochs),
                            ("copula_epochs", copula_epochs)):
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if not isinstance(batch_size, int) or batch_size < 2:
            raise ConfigError(
                f"batch_size must be an integer >= 2, got {batch_size!r}")
        for name, value in (("lr_warmup", lr_warmup), ("lr_copula", lr_copula)):
            if not (float(value) > 0.0 and np.isfinite(value)):
                raise ConfigError(f"{name} must be a positive finite number")
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {seed!r}")
        self.mode = mode
        self.warmup_epochs = warmup_epochs
        self.copula_epochs = copula_epochs
        self.batch_size = batch_size
        self.lr_warmup = float(lr_warmup)
        self.lr_copula = float(lr_copula)
        self.seed = seed
        self.standardize = bool(standardize)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "warmup_epochs": self.warmup_epochs,
            "copula_epochs": self.copula_epochs,
            "batch_size": self.batch_size,
            "lr_warmup": self.lr_warmup,
            "lr_copula": self.lr_copula,
            "seed": self.seed,
            "standardize": self.standardize,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


class LabelScaler:
    """Per-column affine map between original and standardized labels."""

    __slots__ = ("mean", "scale")

    def __init__(self, mean: np.ndarray, scale: np.ndarray):
        mean = np.asarray(mean, dtype=np.float64)
        scale = np.asarray(scale, dtype=np.float64)
        if mean.shape != (4,) or scale.shape != (4,):
            raise ShapeError("scaler mean and scale must be 4-vectors")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(scale))):
            raise NumericalError("scaler statistics are non-finite")
        if np.any(scale <= 0.0):
            raise NumericalError("scaler scale entries must be positive")
        self.mean = mean
        self.scale = scale

    @classmethod
    def fit(cls, labels: np.ndarray, column_names=REPORT_KEYS[:4]) -> "LabelScaler":
        labels = np.asarray(labels, dtype=np.float64)
        if labels.ndim != 2 or labels.shape[1] != 4:
            raise ShapeError(f"labels must be (n, 4), got {labels.shape}")
        mean = labels.mean(axis=0)
        scale = labels.std(axis=0)
        for k, s in enumerate(scale):
            if not s > 0.0:
                raise NumericalError(
                    f"label column {column_names[k]!r} has zero variance; "
                    "cannot standardize")
        return cls(mean, scale)

    @classmethod
    def identity(cls) -> "LabelScaler":
        return cls(np.zeros(4), np.ones(4))

    def transform(self, labels: np.ndarray) -> np.ndarray:
        return (np.asarray(labels, dtype=np.float64) - self.mean) / self.scale

    def to_original(self, standardized: np.ndarray) -> np.ndarray:
        return np.asarray(standardized, dtype=np.float64) * self.scale + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "LabelScaler":
        return cls(np.asarray(d["mean"]), np.asarray(d["scale"]))


def make_scaler(train_data: DatasetContainer, standardize: bool) -> LabelScaler:
    if standardize:
        return LabelScaler.fit(train_data.labels())
    return LabelScaler.identity()


class PhaseLog:
    """Per-epoch record of one training stage.

    ``val_metric[e]`` is the validation score after ``e`` epochs (entry 0 is
    the state the stage started from); ``train_loss[e-1]`` is the mean batch
    loss of epoch ``e``. ``best_epoch`` indexes ``val_metric``.
    """

    __slots__ = ("metric_name", "train_loss", "val_metric", "best_epoch")

    def __init__(self, metric_name: str, train_loss, val_metric, best_epoch: int):
        self.metric_name = metric_name
        self.train_loss = tuple(float(x) for x in train_loss)
        self.val_metric = tuple(float(x) for x in val_metric)
        self.best_epoch = int(best_epoch)

    @property
    def best_val_metric(self) -> float:
        return self.val_metric[self.best_epoch]

    def to_dict(self) -> dict:
        return {
            "metric_name": self.metric_name,
            "train_loss": list(self.train_loss),
            "val_metric": list(self.val_metric),
            "best_epoch": self.best_epoch,
            "best_val_metric": self.best_val_metric,
        }


def _batch_indices(n: int, batch_size: int, rng) -> list:
    order = rng.permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and batches[-1].size == 1:
        # batch normalization rejects single-sample batches in train mode
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def _as_input(images: np.ndarray) -> Tensor:
    return Tensor(np.ascontiguousarray(images, dtype=np.float64))


def _pair_forward(model: BiChannelModel, os_images, od_images, train: bool) -> Tensor:
    pred_os = model.forward(_as_input(os_images), EyeChannel.OS, train=train)
    pred_od = model.forward(_as_input(od_images), EyeChannel.OD, train=train)
    return concat_columns(pred_os, pred_od)


def _mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    diff = sub(pred, Tensor(target))
    # mean over the batch of the per-sample sum over labels
    return scale(mean_all(mul(diff, diff)), float(target.shape[1]))


def _check_mode_model(config: TrainConfig, model: BiChannelModel) -> None:
    if config.mode == "oucopula" and not model.config.use_adapters:
        raise ConfigError("oucopula mode requires a model built with adapters")
    if config.mode == "baseline_single_channel" and model.config.use_adapters:
        raise ConfigError(
            "baseline_single_channel mode requires an adapter-free model")


def predictions(model: BiChannelModel, data: DatasetContainer) -> np.ndarray:
    """Eval-mode standardized-space predictions, shape (n, 4)."""
    os_images = data.os_images()
    od_images = data.od_images()
    out = np.empty((len(data), 2 * model.config.outputs), dtype=np.float64)
    for start in range(0, len(data), _EVAL_CHUNK):
        stop = min(start + _EVAL_CHUNK, len(data))
        out[start:stop] = model.predict_labels(os_images[start:stop],
                                               od_images[start:stop])
    return out


def residuals(model: BiChannelModel, data: DatasetContainer,
              scaler: LabelScaler) -> np.ndarray:
    """Eval-mode standardized residuals prediction - target, shape (n, 4)."""
    return predictions(model, data) - scaler.transform(data.labels())


def evaluate(model: BiChannelModel, data: DatasetContainer,
             scaler: LabelScaler) -> dict:
    """Nine MSEs in original label units; keys per ``REPORT_KEYS``."""
    if len(data) < 1:
        raise ShapeError("cannot evaluate an empty split")
    pred = scaler.to_original(predictions(model, data))
    err = (pred - data.labels()) ** 2
    os_se, os_al, od_se, od_al = (float(x) for x in err.mean(axis=0))
    report = {
        "os_se": os_se,
        "os_al": os_al,
        "od_se": od_se,
        "od_al": od_al,
        "os_total": os_se + os_al,
        "od_total": od_se + od_al,
        "ou_se": os_se + od_se,
        "ou_al": os_al + od_al,
        "ou_total": (os_se + os_al) + (od_se + od_al),
    }
    if not all(np.isfinite(v) for v in report.values()):
        raise NumericalError("evaluation produced non-finite MSEs")
    return report


def _val_total(model: BiChannelModel, val_data: DatasetContainer,
               scaler: LabelScaler) -> float:
    return evaluate(model, val_data, scaler)["ou_total"]


class _BestTracker:
    """Keeps the lowest-metric snapshot seen so far (ties keep the earliest)."""

    __slots__ = ("metric", "epoch", "state")

    def __init__(self, model: BiChannelModel, metric: float, epoch: int):
        self.metric = metric
        self.epoch = epoch
        self.state = model.snapshot()

    def offer(self, model: BiChannelModel, metric: float, epoch: int) -> None:
        if metric < self.metric:
            self.metric = metric
            self.epoch = epoch
            self.state = model.snapshot()


def warmup(model: BiChannelModel, train_data: DatasetContainer,
           val_data: DatasetContainer, config: TrainConfig,
           scaler: LabelScaler) -> PhaseLog:
    """Stage 1: squared-error training; leaves ``model`` at the best-val state."""
    _check_mode_model(config, model)
    if len(train_data) < 2:
        raise ShapeError("warm-up needs at least 2 training patients")
    targets = scaler.transform(train_data.labels())
    os_images = train_data.os_images()
    od_images = train_data.od_images()
    flatten = config.mode == "baseline_single_channel"
    if flatten:
        # each patient becomes two independent single-eye samples
        images = np.concatenate([os_images, od_images])
        targets = np.concatenate([targets[:, :2], targets[:, 2:]])

    params = model.parameters()
    adam = AdamState(lr=config.lr_warmup)
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0)))
    val_metric = [_val_total(model, val_data, scaler)]
    best = _BestTracker(model, val_metric[0], epoch=0)
    train_loss = []
    n = targets.shape[0]
    for epoch in range(1, config.warmup_epochs + 1):
        epoch_losses = []
        for batch in _batch_indices(n, config.batch_size, rng):
            with GradTape() as tape:
                if flatten:
                    pred = model.forward(_as_input(images[batch]),
                                         EyeChannel.OS, train=True)
                else:
                    pred = _pair_forward(model, os_images[batch],
                                         od_images[batch], train=True)
                loss = _mse_loss(pred, targets[batch])
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(
                    f"non-finite warm-up loss {value!r} at epoch {epoch}")
            backward(tape, loss, params)
            adam_step(adam, params)
            epoch_losses.append(value)
        train_loss.append(float(np.mean(epoch_losses)))
        val_metric.append(_val_total(model, val_data, scaler))
        best.offer(model, val_metric[-1], epoch)
    model.load_state_arrays(best.state)
    return PhaseLog("val_ou_total_mse", train_loss, val_metric, best.epoch)


def fit_copula(model: BiChannelModel, train_data: DatasetContainer,
               scaler: LabelScaler) -> CopulaParams:
    """Stage 2: estimate copula parameters from eval-mode training residuals."""
    return estimate_params(residuals(model, train_data, scaler))


def copula_train(model: BiChannelModel, params: CopulaParams,
                 train_data: DatasetContainer, val_data: DatasetContainer,
                 config: TrainConfig, scaler: LabelScaler) -> PhaseLog:
    """Stage 3: copula-NLL training with frozen ``params``."""
    if config.mode == "baseline_single_channel":
        raise ConfigError("baseline_single_channel mode has no copula stage")
    if not model.config.use_adapters:
        raise ConfigError("copula stage requires a model built with adapters")
    if not params.factorized:
        raise ConfigError("copula stage requires factorized parameters")
    if len(train_data) < 2:
        raise ShapeError("copula stage needs at least 2 training patients")
    targets = scaler.transform(train_data.labels())
    os_images = train_data.os_images()
    od_images = train_data.od_images()

    model_params = model.parameters()
    adam = AdamState(lr=config.lr_copula)
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 1)))

    def val_nll() -> float:
        return copula_nll(residuals(model, val_data, scaler), params).item()

    val_metric = [val_nll()]
    best = _BestTracker(model, val_metric[0], epoch=0)
    train_loss = []
    n = len(train_data)
    for epoch in range(1, config.copula_epochs + 1):
        epoch_losses = []
        for batch in _batch_indices(n, config.batch_size, rng):
            with GradTape() as tape:
                pred = _pair_forward(model, os_images[batch],
                                     od_images[batch], train=True)
                resid = sub(pred, Tensor(targets[batch]))
                loss = copula_nll(resid, params)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(
                    f"non-finite copula loss {value!r} at epoch {epoch}")
            backward(tape, loss, model_params)
            adam_step(adam, model_params)
            epoch_losses.append(value)
        train_loss.append(float(np.mean(epoch_losses)))
        val_metric.append(val_nll())
        best.offer(model, val_metric[-1], epoch)
    model.load_state_arrays(best.state)
    return PhaseLog("val_copula_nll", train_loss, val_metric, best.epoch)


class RunResult:
    """Everything produced by one training run."""

    __slots__ = ("model", "scaler", "copula", "warmup_log", "copula_log")

    def __init__(self, model, scaler, copula, warmup_log, copula_log):
        self.model = model
        self.scaler = scaler
        self.copula = copula
        self.warmup_log = warmup_log
        self.copula_log = copula_log


def execute_run(model: BiChannelModel, train_data: DatasetContainer,
                val_data: DatasetContainer, config: TrainConfig) -> RunResult:
    """Run the stages selected by ``config.mode`` on a freshly built model."""
    scaler = make_scaler(train_data, config.standardize)
    warmup_log = warmup(model, train_data, val_data, config, scaler)
    copula = None
    copula_log = None
    if config.mode == "oucopula":
        copula = fit_copula(model, train_data, scaler)
        copula_log = copula_train(model, copula, train_data, val_data,
                                  config, scaler)
    return RunResult(model, scaler, copula, warmup_log, copula_log)
