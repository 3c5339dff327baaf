"""Finite-difference verification of the reverse-mode gradients.

Central differences with step 1e-5 against the tape gradients, reported
as the worst elementwise relative error with denominator
max(|analytic|, |numeric|, 1e-3). The built-in suite covers every
differentiable operation at small shapes; inputs are nudged away from
relu kinks and pooling ties so the comparison point is smooth. Two
whole-model cases close the suite: the paired squared-error loss and the
copula loss, each differentiated in parameter space at one sampled
coordinate per parameter tensor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .copula import CopulaParams, copula_nll
from .tensor import GradTape, Tensor, backward

__all__ = [
    "GradCheckResult",
    "check_scalar_function",
    "check_model_loss",
    "default_suite",
    "model_loss_cases",
    "run_suite",
]

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-6


@dataclass(frozen=True)
class GradCheckResult:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def numerical_gradient(fn, arrays, index: int, h: float = DEFAULT_STEP) -> np.ndarray:
    """Central-difference gradient of scalar fn(*arrays) in arrays[index]."""
    base = [np.array(a, dtype=np.float64) for a in arrays]
    grad = np.zeros_like(base[index])
    flat = base[index].reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = float(fn(*[Tensor(a) for a in base]).item())
        flat[i] = orig - h
        lo = float(fn(*[Tensor(a) for a in base]).item())
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    return grad


def check_scalar_function(name, fn, arrays, tolerance: float = DEFAULT_TOLERANCE,
                          h: float = DEFAULT_STEP) -> GradCheckResult:
    """Compare tape gradients of scalar fn(*arrays) with central differences."""
    tensors = [Tensor(np.array(a, dtype=np.float64)) for a in arrays]
    with GradTape() as tape:
        out = fn(*tensors)
    grads = backward(tape, out)
    worst = 0.0
    for i, t in enumerate(tensors):
        analytic = grads.wrt(t)
        numeric = numerical_gradient(fn, arrays, i, h=h)
        worst = max(worst, _relative_error(analytic, numeric))
    return GradCheckResult(name=name, max_rel_error=worst, tolerance=tolerance)


def _away_from_kinks(x: np.ndarray, margin: float = 0.05) -> np.ndarray:
    """Push values out of the [-margin, margin] band around zero."""
    return x + np.where(x >= 0.0, margin, -margin)


def _tie_free(x: np.ndarray) -> np.ndarray:
    """Break value ties so pooling argmax picks a unique winner."""
    ramp = np.arange(x.size, dtype=np.float64).reshape(x.shape)
    return x + 1e-3 * ramp


def default_suite(seed: int = 20240):
    """(name, fn, arrays) cases covering every differentiable op."""
    rng = np.random.default_rng(seed)
    cases = []

    x = rng.normal(size=(3, 4))
    y = rng.normal(size=(3, 4))
    cases.append(("add_mul_scale", lambda a, b: ops.sum_all(
        ops.scale(ops.mul(ops.add(a, b), ops.sub(a, b)), 0.7)), [x, y]))
    cases.append(("mean_all", lambda a: ops.mean_all(ops.mul(a, a)), [x]))
    cases.append(("relu", lambda a: ops.sum_all(ops.relu(a)),
                  [_away_from_kinks(rng.normal(size=(4, 5)))]))

    xlin = rng.normal(size=(3, 6))
    wlin = rng.normal(size=(4, 6)) * 0.5
    blin = rng.normal(size=(4,))
    cases.append(("linear", lambda a, w, b: ops.mean_all(ops.linear(a, w, b)),
                  [xlin, wlin, blin]))

    xc = rng.normal(size=(2, 3, 6, 6))
    wc = rng.normal(size=(4, 3, 3, 3)) * 0.4
    bc = rng.normal(size=(4,))
    cases.append(("conv2d_s1p1", lambda a, w, b: ops.mean_all(
        ops.conv2d(a, w, b, stride=1, padding=1)), [xc, wc, bc]))
    cases.append(("conv2d_s2p1", lambda a, w, b: ops.mean_all(
        ops.conv2d(a, w, b, stride=2, padding=1)), [xc, wc, bc]))
    w1 = rng.normal(size=(5, 3, 1, 1)) * 0.4
    cases.append(("conv2d_1x1_nobias", lambda a, w: ops.mean_all(
        ops.conv2d(a, w, stride=1, padding=0)), [xc, w1]))

    xp = _tie_free(rng.normal(size=(2, 2, 7, 7)))
    cases.append(("maxpool2d", lambda a: ops.mean_all(
        ops.maxpool2d(a, kernel=3, stride=2, padding=1)), [xp]))

    xg = rng.normal(size=(3, 4, 5, 5))
    cases.append(("global_avg_pool", lambda a: ops.mean_all(ops.global_avg_pool(a)), [xg]))
    cases.append(("slice_channels", lambda a: ops.mean_all(
        ops.mul(ops.slice_channels(a, 2), ops.slice_channels(a, 2))), [xg]))

    ca = rng.normal(size=(3, 2))
    cb = rng.normal(size=(3, 4))
    cases.append(("concat_columns", lambda a, b: ops.mean_all(
        ops.mul(ops.concat_columns(a, b), ops.concat_columns(a, b))), [ca, cb]))

    xb = rng.normal(size=(4, 3, 5, 5))
    gb = rng.normal(size=(3,)) * 0.3 + 1.0
    bb = rng.normal(size=(3,)) * 0.3

    def bn_train(a, g, b):
        state = ops.BatchNormState(3)
        return ops.mean_all(ops.mul(ops.batchnorm2d(a, g, b, state, train=True),
                                    ops.batchnorm2d(a, g, b, ops.BatchNormState(3), train=True)))

    cases.append(("batchnorm2d_train", bn_train, [xb, gb, bb]))

    def bn_eval(a, g, b):
        state = ops.BatchNormState(3)
        state.running_mean[:] = np.array([0.1, -0.2, 0.05])
        state.running_var[:] = np.array([1.3, 0.8, 1.1])
        return ops.mean_all(ops.batchnorm2d(a, g, b, state, train=False))

    cases.append(("batchnorm2d_eval", bn_eval, [xb, gb, bb]))

    params = CopulaParams(
        sigma=np.array([1.0, 0.8, 1.2, 0.9]),
        gamma=np.array([
            [1.0, 0.3, 0.5, 0.1],
            [0.3, 1.0, 0.2, 0.4],
            [0.5, 0.2, 1.0, 0.3],
            [0.1, 0.4, 0.3, 1.0],
        ]),
    )
    cases.append(("copula_nll", lambda e: copula_nll(e, params),
                  [rng.normal(size=(6, 4))]))
    return cases


def check_model_loss(name, model, loss_fn, seed: int = 0,
                     tolerance: float = DEFAULT_TOLERANCE,
                     h: float = DEFAULT_STEP) -> GradCheckResult:
    """Parameter-space check: one sampled coordinate per parameter tensor.

    loss_fn() must rebuild the scalar loss from the model's current
    parameter values on every call.
    """
    params = model.parameters()
    model.zero_grad()
    with GradTape() as tape:
        loss = loss_fn()
    backward(tape, loss, parameters=params)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        idx = int(rng.integers(0, p.value.size))
        flat = p.value.data.reshape(-1)
        orig = flat[idx]
        flat[idx] = orig + h
        hi = float(loss_fn().item())
        flat[idx] = orig - h
        lo = float(loss_fn().item())
        flat[idx] = orig
        numeric = np.array([(hi - lo) / (2.0 * h)])
        analytic = np.array([float(p.grad.data.reshape(-1)[idx])])
        worst = max(worst, _relative_error(analytic, numeric))
    return GradCheckResult(name=name, max_rel_error=worst, tolerance=tolerance)


def model_loss_cases(seed: int = 20240, tolerance: float = DEFAULT_TOLERANCE):
    """Whole-model checks for both training losses on a small paired model."""
    from .backbone import BackboneConfig, EyeChannel, build_model

    config = BackboneConfig(resolution=16, channels=1, stage_widths=(8, 16),
                            blocks_per_stage=1, use_adapters=True)
    model = build_model(config, seed=seed)
    rng = np.random.default_rng(seed + 1)
    # jitter off the exact zero-adapter init: the adapter BN sees zero
    # variance there and its eps guard makes central differences
    # truncation-dominated rather than informative
    for p in model.parameters():
        p.value.data += 0.05 * rng.normal(size=p.value.shape)
    os_img = rng.uniform(0.1, 0.9, size=(2, 1, 16, 16))
    od_img = rng.uniform(0.1, 0.9, size=(2, 1, 16, 16))
    y = rng.normal(size=(2, 4))
    params = CopulaParams(
        sigma=np.array([1.0, 0.8, 1.2, 0.9]),
        gamma=np.array([
            [1.0, 0.3, 0.5, 0.1],
            [0.3, 1.0, 0.2, 0.4],
            [0.5, 0.2, 1.0, 0.3],
            [0.1, 0.4, 0.3, 1.0],
        ]),
    )

    def residuals():
        left = model.forward(os_img, EyeChannel.OS, train=True)
        right = model.forward(od_img, EyeChannel.OD, train=True)
        return ops.sub(ops.concat_columns(left, right), Tensor(y))

    def warmup_loss():
        e = residuals()
        return ops.scale(ops.mean_all(ops.mul(e, e)), 4.0)

    def copula_loss():
        return copula_nll(residuals(), params)

    return [
        check_model_loss("model_warmup_mse", model, warmup_loss,
                         seed=seed + 2, tolerance=tolerance),
        check_model_loss("model_copula_nll", model, copula_loss,
                         seed=seed + 3, tolerance=tolerance),
    ]


def run_suite(seed: int = 20240, tolerance: float = DEFAULT_TOLERANCE):
    """Run every op case plus the whole-model cases; returns GradCheckResults."""
    results = [check_scalar_function(name, fn, arrays, tolerance=tolerance)
               for name, fn, arrays in default_suite(seed)]
    results.extend(model_loss_cases(seed, tolerance=tolerance))
    return results
