"""Adam optimizer over :class:`~oucopula.tensor.Parameter` collections."""

from __future__ import annotations

import numpy as np

from .errors import NumericalError
from .tensor import Parameter

__all__ = ["AdamState", "adam_step"]


class AdamState:
    """First/second moment buffers plus hyperparameters for one optimizer.

    Moments are keyed by parameter path and created lazily on the first
    step, so one state object can only ever serve one model.
    """

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(state: AdamState, parameters) -> None:
    """Apply one bias-corrected Adam update and clear the gradients.

    Raises :class:`NumericalError` naming the offending parameter path if
    any gradient is non-finite.
    """
    parameters = list(parameters)
    for p in parameters:
        if not np.all(np.isfinite(p.grad.data)):
            raise NumericalError(f"non-finite gradient for parameter {p.path!r}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p in parameters:
        g = p.grad.data
        m = state.m.get(p.path)
        if m is None:
            m = state.m[p.path] = np.zeros_like(p.value.data)
        v = state.v.get(p.path)
        if v is None:
            v = state.v[p.path] = np.zeros_like(p.value.data)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad.data[...] = 0.0
