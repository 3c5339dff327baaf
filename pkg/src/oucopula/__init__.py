"""Bi-channel convolutional regression with a Gaussian copula loss."""

from .backbone import BackboneConfig, BiChannelModel, EyeChannel, build_model
from .checkpoint import load_checkpoint, read_checkpoint_meta, save_checkpoint
from .copula import (
    CopulaParams,
    copula_density,
    copula_nll,
    estimate_params,
    repair_correlation,
)
from .crossval import run_cv, run_single
from .data import (
    DatasetContainer,
    GeneratorConfig,
    PatientRecord,
    SplitSpec,
    generate,
    plan_splits,
)
from .dataio import read_container, read_manifest, write_container
from .errors import (
    ConfigError,
    EstimationError,
    FormatError,
    NumericalError,
    OUCopulaError,
    ShapeError,
)
from .tensor import GradTape, GradientMap, Parameter, Tensor, backward
from .training import (
    LabelScaler,
    TrainConfig,
    copula_train,
    evaluate,
    execute_run,
    fit_copula,
    warmup,
)

__version__ = "0.1.0"

__all__ = [
    "BackboneConfig",
    "BiChannelModel",
    "ConfigError",
    "CopulaParams",
    "DatasetContainer",
    "EstimationError",
    "EyeChannel",
    "FormatError",
    "GeneratorConfig",
    "GradTape",
    "GradientMap",
    "LabelScaler",
    "NumericalError",
    "OUCopulaError",
    "Parameter",
    "PatientRecord",
    "ShapeError",
    "SplitSpec",
    "Tensor",
    "TrainConfig",
    "backward",
    "build_model",
    "copula_density",
    "copula_nll",
    "copula_train",
    "estimate_params",
    "evaluate",
    "execute_run",
    "fit_copula",
    "generate",
    "load_checkpoint",
    "plan_splits",
    "read_checkpoint_meta",
    "read_container",
    "read_manifest",
    "repair_correlation",
    "run_cv",
    "run_single",
    "save_checkpoint",
    "warmup",
    "write_container",
    "__version__",
]
