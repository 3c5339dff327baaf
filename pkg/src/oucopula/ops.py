"""Differentiable numerical ops on :class:`~oucopula.tensor.Tensor`.

Convolution is computed by im2col-style reshaping to a BLAS matrix product;
the naive nested-loop form exists only as a test oracle, not here.
All ops reject incompatible shapes with a descriptive diagnostic.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, apply_op

__all__ = [
    "add",
    "sub",
    "mul",
    "scale",
    "sum_all",
    "mean_all",
    "relu",
    "linear",
    "global_avg_pool",
    "concat_columns",
    "slice_channels",
    "conv2d",
    "maxpool2d",
    "batchnorm2d",
    "BatchNormState",
]


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: operand shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    _same_shape(a, b, "add")
    return apply_op("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise difference ``a - b`` of two same-shape tensors."""
    _same_shape(a, b, "sub")
    return apply_op("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two same-shape tensors."""
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return apply_op("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a python constant (not differentiated through)."""
    c = float(c)
    return apply_op("scale", x.data * c, (x,), lambda g: (g * c,))


def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    shape = x.shape
    return apply_op(
        "sum_all", np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape),)
    )


def mean_all(x: Tensor) -> Tensor:
    """Mean of all elements, as a scalar tensor."""
    shape, n = x.shape, x.size
    return apply_op(
        "mean_all", np.asarray(x.data.mean()), (x,), lambda g: (np.broadcast_to(g / n, shape),)
    )


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x)."""
    mask = x.data > 0
    return apply_op("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map of a (batch, features) tensor: ``x @ weight.T + bias``."""
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError(f"linear: need 2-D input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"linear: input features {x.shape[1]} != weight features {weight.shape[1]}"
        )
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias shape {bias.shape} != ({weight.shape[0]},)")
    xd, wd = x.data, weight.data

    def bwd(g):
        return g @ wd, g.T @ xd, g.sum(axis=0)

    return apply_op("linear", xd @ wd.T + bias.data, (x, weight, bias), bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean per channel: (B, C, H, W) -> (B, C)."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool: need a 4-D tensor, got {x.shape}")
    b, c, h, w = x.shape

    def bwd(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), (b, c, h, w)),)

    return apply_op("global_avg_pool", x.data.mean(axis=(2, 3)), (x,), bwd)


def concat_columns(a: Tensor, b: Tensor) -> Tensor:
    """Join two (batch, k) tensors side by side into (batch, ka + kb)."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_columns: incompatible shapes {a.shape} and {b.shape}")
    ka = a.shape[1]

    def bwd(g):
        return g[:, :ka], g[:, ka:]

    return apply_op("concat_columns", np.concatenate([a.data, b.data], axis=1), (a, b), bwd)


def slice_channels(x: Tensor, count: int) -> Tensor:
    """First ``count`` channels of a (B, C, H, W) tensor."""
    if x.ndim != 4:
        raise ShapeError(f"slice_channels: need a 4-D tensor, got {x.shape}")
    if not 1 <= count <= x.shape[1]:
        raise ShapeError(f"slice_channels: count {count} outside 1..{x.shape[1]}")
    shape = x.shape

    def bwd(g):
        out = np.zeros(shape)
        out[:, :count] = g
        return (out,)

    return apply_op("slice_channels", np.ascontiguousarray(x.data[:, :count]), (x,), bwd)


def _conv_out_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """Gather sliding windows of a padded (B, C, H, W) array.

    Returns (B, C, kh, kw, oh, ow); one strided copy per kernel offset.
    """
    b, c = xp.shape[:2]
    cols = np.empty((b, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols


def _col2im_add(dxp: np.ndarray, dcols: np.ndarray, stride: int) -> None:
    """Scatter-add (B, oh, ow, C, kh, kw) gradients back into the padded input."""
    kh, kw = dcols.shape[4], dcols.shape[5]
    oh, ow = dcols.shape[1], dcols.shape[2]
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += dcols[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2-D cross-correlation of (B, Cin, H, W) with (Cout, Cin, KH, KW).

    Output spatial size is floor((in + 2*padding - kernel)/stride) + 1.
    Differentiable w.r.t. input, weight, and bias.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d: need 4-D input and weight, got {x.shape} and {weight.shape}")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")
    if padding < 0:
        raise ShapeError(f"conv2d: padding must be >= 0, got {padding}")
    b, cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d: input channels {cin} != weight input channels {cin_w}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    oh = _conv_out_size(h, kh, stride, padding)
    ow = _conv_out_size(w, kw, stride, padding)
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} with stride {stride}, padding {padding} "
            f"does not fit input {h}x{w}"
        )

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    cols = _im2col(xp, kh, kw, stride, oh, ow)
    out = np.tensordot(weight.data, cols, axes=([1, 2, 3], [1, 2, 3]))  # (Cout, B, oh, ow)
    out = out.transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    del cols  # rebuilt in backward; keeping it would pin large buffers on the tape
    wd = weight.data

    def bwd(g):
        cols_b = _im2col(xp, kh, kw, stride, oh, ow)
        dw = np.tensordot(g, cols_b, axes=([0, 2, 3], [0, 4, 5]))
        dcols = np.tensordot(g, wd, axes=([1], [0]))  # (B, oh, ow, Cin, kh, kw)
        dxp = np.zeros_like(xp)
        _col2im_add(dxp, dcols, stride)
        dx = dxp[:, :, padding : padding + h, padding : padding + w] if padding else dxp
        db = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return dx, dw, db

    inputs = (x, weight) if bias is None else (x, weight, bias)
    if bias is None:
        return apply_op("conv2d", out, inputs, lambda g: bwd(g)[:2])
    return apply_op("conv2d", out, inputs, bwd)


def maxpool2d(x: Tensor, kernel: int = 3, stride: int = 2, padding: int = 1) -> Tensor:
    """Max pooling over (B, C, H, W); padded positions never win."""
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d: need a 4-D tensor, got {x.shape}")
    b, c, h, w = x.shape
    oh = _conv_out_size(h, kernel, stride, padding)
    ow = _conv_out_size(w, kernel, stride, padding)
    if oh < 1 or ow < 1:
        raise ShapeError(f"maxpool2d: window does not fit input {h}x{w}")
    xp = np.pad(
        x.data,
        ((0, 0), (0, 0), (padding, padding), (padding, padding)),
        constant_values=-np.inf,
    )
    cols = _im2col(xp, kernel, kernel, stride, oh, ow).reshape(b, c, kernel * kernel, oh, ow)
    idx = cols.argmax(axis=2)
    out = np.take_along_axis(cols, idx[:, :, None], axis=2)[:, :, 0]

    def bwd(g):
        dcols = np.zeros((b, c, kernel * kernel, oh, ow))
        np.put_along_axis(dcols, idx[:, :, None], g[:, :, None], axis=2)
        dcols = dcols.reshape(b, c, kernel, kernel, oh, ow).transpose(0, 4, 5, 1, 2, 3)
        dxp = np.zeros_like(xp)
        _col2im_add(dxp, dcols, stride)
        return (dxp[:, :, padding : padding + h, padding : padding + w],)

    return apply_op("maxpool2d", out, (x,), bwd)


class BatchNormState:
    """Running mean/variance for one batch-norm site."""

    __slots__ = ("running_mean", "running_var", "momentum", "eps")

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    @property
    def channels(self) -> int:
        return self.running_mean.shape[0]


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, train: bool) -> Tensor:
    """Per-channel batch normalization of a (B, C, H, W) tensor.

    Train mode normalizes by batch statistics and updates the running stats
    with ``state.momentum`` (unbiased variance stored, biased used to
    normalize); eval mode normalizes by the running stats. Differentiable
    w.r.t. input, gamma, and beta.
    """
    if x.ndim != 4:
        raise ShapeError(f"batchnorm2d: need a 4-D tensor, got {x.shape}")
    b, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"batchnorm2d: gamma/beta shapes {gamma.shape}/{beta.shape} != ({c},)"
        )
    if state.channels != c:
        raise ShapeError(f"batchnorm2d: state tracks {state.channels} channels, input has {c}")
    m = b * h * w
    if train:
        if b < 2:
            raise ShapeError("batchnorm2d: train mode requires batch size >= 2")
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        mom = state.momentum
        state.running_mean = (1.0 - mom) * state.running_mean + mom * mean
        state.running_var = (1.0 - mom) * state.running_var + mom * (var * m / (m - 1))
    else:
        mean = state.running_mean
        var = state.running_var
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mean[None, :, None, None]) * inv[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    gd = gamma.data

    def bwd(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        coeff = (gd * inv)[None, :, None, None]
        if train:
            dx = coeff * (g - (dbeta / m)[None, :, None, None] - xhat * (dgamma / m)[None, :, None, None])
        else:
            dx = coeff * g
        return dx, dgamma, dbeta

    return apply_op("batchnorm2d", out, (x, gamma, beta), bwd)
