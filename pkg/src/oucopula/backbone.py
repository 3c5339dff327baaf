"""Bi-channel residual CNN: shared trunk, per-eye adapters, regression head.

The trunk is a two-stage basic-block residual network (stem, stage widths
64/128 by default, two blocks per stage, global average pooling). Every
residual block carries one adapter site per eye: a 1x1 convolution plus
batch norm running in parallel with the block's second 3x3 convolution,
its output added to that convolution's output. Adapter convolutions start
at zero, so a fresh model computes exactly the plain trunk for both eyes;
all trunk parameters and batch-norm running statistics are shared between
the eyes, and each eye's adapters are a disjoint parameter group.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .tensor import Parameter, Tensor

__all__ = ["EyeChannel", "BackboneConfig", "BiChannelModel", "build_model"]


class EyeChannel(Enum):
    """The two paired channels: left eye (OS) and right eye (OD)."""

    OS = "os"
    OD = "od"


@dataclass(frozen=True)
class BackboneConfig:
    """Architecture knobs; the defaults give the two-stage trunk."""

    resolution: int = 64
    channels: int = 3
    stem_kernel: int | None = None  # None: 3 below resolution 128, else 7
    stem_stride: int | None = None  # None: 1 below resolution 128, else 2
    stage_widths: tuple[int, ...] = (64, 128)
    blocks_per_stage: int = 2
    outputs: int = 2
    adapter_width_ratio: float = 1.0
    use_adapters: bool = True
    per_channel_head: bool = False

    def __post_init__(self):
        if self.resolution < 16:
            raise ConfigError(f"resolution {self.resolution} below the minimum of 16")
        if self.channels < 1:
            raise ConfigError("channels must be >= 1")
        object.__setattr__(self, "stage_widths", tuple(int(w) for w in self.stage_widths))
        if len(self.stage_widths) < 1 or any(w < 1 for w in self.stage_widths):
            raise ConfigError(f"invalid stage widths {self.stage_widths}")
        if self.blocks_per_stage < 1:
            raise ConfigError("blocks_per_stage must be >= 1")
        if self.outputs < 1:
            raise ConfigError("outputs must be >= 1")
        if not 0.0 < self.adapter_width_ratio <= 1.0:
            raise ConfigError("adapter_width_ratio must be in (0, 1]")
        k, s = self.resolved_stem()
        if k < 1 or k % 2 == 0:
            raise ConfigError(f"stem kernel {k} must be odd and positive")
        if s < 1:
            raise ConfigError(f"stem stride {s} must be >= 1")

    def resolved_stem(self) -> tuple[int, int]:
        k = self.stem_kernel if self.stem_kernel is not None else (
            7 if self.resolution >= 128 else 3)
        s = self.stem_stride if self.stem_stride is not None else (
            2 if self.resolution >= 128 else 1)
        return int(k), int(s)

    @property
    def stem_pool(self) -> bool:
        return self.resolved_stem()[1] >= 2

    def to_dict(self) -> dict:
        k, s = self.resolved_stem()
        return {
            "resolution": self.resolution,
            "channels": self.channels,
            "stem_kernel": k,
            "stem_stride": s,
            "stage_widths": list(self.stage_widths),
            "blocks_per_stage": self.blocks_per_stage,
            "outputs": self.outputs,
            "adapter_width_ratio": self.adapter_width_ratio,
            "use_adapters": self.use_adapters,
            "per_channel_head": self.per_channel_head,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        d = dict(d)
        d["stage_widths"] = tuple(d.get("stage_widths", (64, 128)))
        return cls(**d)


class _Registry:
    """Creates parameters with unique dotted paths and tracks BN states."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.params: dict[str, Parameter] = {}
        self.bn_states: dict[str, ops.BatchNormState] = {}

    def param(self, path: str, value: np.ndarray) -> Parameter:
        if path in self.params:
            raise ConfigError(f"duplicate parameter path {path!r}")
        p = Parameter(value, path=path)
        self.params[path] = p
        return p

    def he_conv(self, path: str, cout: int, cin: int, k: int) -> Parameter:
        fan_in = cin * k * k
        w = self.rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(cout, cin, k, k))
        return self.param(path, w)

    def bn_pair(self, prefix: str, channels: int):
        gamma = self.param(f"{prefix}.gamma", np.ones(channels))
        beta = self.param(f"{prefix}.beta", np.zeros(channels))
        state = ops.BatchNormState(channels)
        self.bn_states[prefix] = state
        return gamma, beta, state


class _ConvBN:
    def __init__(self, reg: _Registry, prefix: str, cin: int, cout: int,
                 kernel: int, stride: int, padding: int):
        self.weight = reg.he_conv(f"{prefix}.conv.weight", cout, cin, kernel)
        self.gamma, self.beta, self.state = reg.bn_pair(f"{prefix}.bn", cout)
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor, train: bool) -> Tensor:
        h = ops.conv2d(x, self.weight.value, stride=self.stride, padding=self.padding)
        return ops.batchnorm2d(h, self.gamma.value, self.beta.value, self.state, train)


class _Adapter:
    """Per-eye 1x1 conv + BN, reading the first ratio-fraction of channels."""

    def __init__(self, reg: _Registry, prefix: str, cin: int, cout: int, ratio: float):
        self.read = max(1, math.ceil(cin * ratio))
        self.weight = reg.param(f"{prefix}.conv.weight", np.zeros((cout, self.read, 1, 1)))
        self.gamma, self.beta, self.state = reg.bn_pair(f"{prefix}.bn", cout)
        self.cin = cin

    def forward(self, x: Tensor, train: bool) -> Tensor:
        h = x if self.read == self.cin else ops.slice_channels(x, self.read)
        h = ops.conv2d(h, self.weight.value, stride=1, padding=0)
        return ops.batchnorm2d(h, self.gamma.value, self.beta.value, self.state, train)


class _BasicBlock:
    def __init__(self, reg: _Registry, prefix: str, cin: int, cout: int, stride: int,
                 adapters: bool, ratio: float):
        self.conv1 = _ConvBN(reg, f"{prefix}.conv1_path", cin, cout, 3, stride, 1)
        # conv2 keeps its own BN applied after the adapter branch joins
        self.conv2_weight = reg.he_conv(f"{prefix}.conv2.weight", cout, cout, 3)
        self.gamma2, self.beta2, self.state2 = reg.bn_pair(f"{prefix}.bn2", cout)
        self.down = None
        if stride != 1 or cin != cout:
            self.down = _ConvBN(reg, f"{prefix}.down", cin, cout, 1, stride, 0)
        self.adapters = {}
        if adapters:
            site = prefix.replace("backbone.", "", 1)
            for eye in EyeChannel:
                self.adapters[eye] = _Adapter(
                    reg, f"adapter.{eye.value}.{site}", cout, cout, ratio)

    def forward(self, x: Tensor, eye: EyeChannel, train: bool) -> Tensor:
        h = ops.relu(self.conv1.forward(x, train))
        c2 = ops.conv2d(h, self.conv2_weight.value, stride=1, padding=1)
        if self.adapters:
            c2 = ops.add(c2, self.adapters[eye].forward(h, train))
        y = ops.batchnorm2d(c2, self.gamma2.value, self.beta2.value, self.state2, train)
        shortcut = x if self.down is None else self.down.forward(x, train)
        return ops.relu(ops.add(y, shortcut))


class BiChannelModel:
    """Shared trunk + per-eye adapters + regression head.

    Not safe for concurrent mutation; read-only inference may be shared.
    """

    def __init__(self, config: BackboneConfig, seed: int):
        self.config = config
        self.seed = int(seed)
        reg = _Registry(seed)
        k, s = config.resolved_stem()
        self.stem = _ConvBN(reg, "backbone.stem", config.channels,
                            config.stage_widths[0], k, s, k // 2)
        size = _conv_size(config.resolution, k, s, k // 2)
        if config.stem_pool:
            size = _conv_size(size, 3, 2, 1)
        self.blocks: list[_BasicBlock] = []
        cin = config.stage_widths[0]
        for si, width in enumerate(config.stage_widths):
            for bi in range(config.blocks_per_stage):
                stride = 2 if (si > 0 and bi == 0) else 1
                size = _conv_size(size, 3, stride, 1)
                if size < 1:
                    raise ConfigError(
                        f"resolution {config.resolution} too small for the stride plan")
                self.blocks.append(_BasicBlock(
                    reg, f"backbone.stage{si + 1}.block{bi}", cin, width, stride,
                    config.use_adapters, config.adapter_width_ratio))
                cin = width
        self.final_size = size
        feat = config.stage_widths[-1]
        self.heads = {}
        if config.per_channel_head:
            for eye in EyeChannel:
                w = reg.param(f"head.{eye.value}.weight",
                              reg.rng.normal(0.0, math.sqrt(1.0 / feat),
                                             size=(config.outputs, feat)))
                b = reg.param(f"head.{eye.value}.bias", np.zeros(config.outputs))
                self.heads[eye] = (w, b)
        else:
            w = reg.param("head.weight",
                          reg.rng.normal(0.0, math.sqrt(1.0 / feat),
                                         size=(config.outputs, feat)))
            b = reg.param("head.bias", np.zeros(config.outputs))
            for eye in EyeChannel:
                self.heads[eye] = (w, b)
        self._params = reg.params
        self.bn_states = reg.bn_states

    # ------------------------------------------------------------- parameters

    def parameters(self, prefix: str = "") -> list[Parameter]:
        return [p for path, p in self._params.items() if path.startswith(prefix)]

    def parameter(self, path: str) -> Parameter:
        return self._params[path]

    @property
    def parameter_paths(self) -> list[str]:
        return list(self._params)

    def census(self) -> dict[str, int]:
        """Element counts by component group."""
        counts = {"backbone": 0, "adapters_os": 0, "adapters_od": 0, "head": 0}
        for path, p in self._params.items():
            if path.startswith("backbone."):
                counts["backbone"] += p.value.size
            elif path.startswith("adapter.os."):
                counts["adapters_os"] += p.value.size
            elif path.startswith("adapter.od."):
                counts["adapters_od"] += p.value.size
            else:
                counts["head"] += p.value.size
        counts["adapters"] = counts["adapters_os"] + counts["adapters_od"]
        counts["total"] = sum(p.value.size for p in self._params.values())
        return counts

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    # ---------------------------------------------------------------- forward

    def forward(self, image, eye: EyeChannel, train: bool = False) -> Tensor:
        """Regression outputs (batch, K) for one eye's image batch."""
        x = image if isinstance(image, Tensor) else Tensor(image)
        c = self.config
        if x.ndim != 4 or x.shape[1:] != (c.channels, c.resolution, c.resolution):
            raise ShapeError(
                f"input {x.shape} does not match configured "
                f"(batch, {c.channels}, {c.resolution}, {c.resolution})")
        if not isinstance(eye, EyeChannel):
            raise ConfigError(f"unknown channel {eye!r}")
        h = ops.relu(self.stem.forward(x, train))
        if c.stem_pool:
            h = ops.maxpool2d(h, kernel=3, stride=2, padding=1)
        for block in self.blocks:
            h = block.forward(h, eye, train)
        feats = ops.global_avg_pool(h)
        w, b = self.heads[eye]
        return ops.linear(feats, w.value, b.value)

    def predict_labels(self, os_image, od_image) -> np.ndarray:
        """Eval-mode 4-wide predictions (OS-SE, OS-AL, OD-SE, OD-AL)."""
        os_t = os_image if isinstance(os_image, Tensor) else Tensor(os_image)
        od_t = od_image if isinstance(od_image, Tensor) else Tensor(od_image)
        if os_t.shape[0] != od_t.shape[0]:
            raise ShapeError(
                f"paired batches differ in size: {os_t.shape[0]} vs {od_t.shape[0]}")
        left = self.forward(os_t, EyeChannel.OS, train=False)
        right = self.forward(od_t, EyeChannel.OD, train=False)
        return np.concatenate([left.data, right.data], axis=1)

    # ------------------------------------------------------------------ state

    def state_arrays(self) -> dict[str, np.ndarray]:
        """All learnable values plus BN running stats, keyed by path."""
        out = {path: p.value.data for path, p in self._params.items()}
        for path, st in self.bn_states.items():
            out[f"{path}.running_mean"] = st.running_mean
            out[f"{path}.running_var"] = st.running_var
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        expected = set(self.state_arrays())
        got = set(arrays)
        if expected != got:
            missing = sorted(expected - got)[:3]
            extra = sorted(got - expected)[:3]
            raise ConfigError(f"state keys mismatch: missing {missing}, unexpected {extra}")
        for path, p in self._params.items():
            arr = np.asarray(arrays[path], dtype=np.float64)
            if arr.shape != p.value.shape:
                raise ShapeError(f"{path}: stored shape {arr.shape} != {p.value.shape}")
            p.value.data[...] = arr
        for path, st in self.bn_states.items():
            st.running_mean[...] = arrays[f"{path}.running_mean"]
            st.running_var[...] = arrays[f"{path}.running_var"]

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.state_arrays().items()}


def _conv_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def build_model(config: BackboneConfig, seed: int) -> BiChannelModel:
    """Deterministic model construction; validates the adapter budget."""
    model = BiChannelModel(config, seed)
    census = model.census()
    if config.use_adapters and census["adapters"] >= 0.15 * census["backbone"]:
        raise ConfigError(
            f"adapter parameters ({census['adapters']}) exceed 15% of the "
            f"backbone ({census['backbone']})")
    return model
