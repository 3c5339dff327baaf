"""Dense float64 tensors with tape-based reverse-mode differentiation.

The engine is deliberately small: ops execute eagerly on numpy arrays and,
when a :class:`GradTape` is active, append a record to it. Calling
:func:`backward` replays the records once, in reverse execution order, and
accumulates gradients into the supplied :class:`Parameter` objects.
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import ShapeError

__all__ = ["Tensor", "Parameter", "GradTape", "GradientMap", "backward", "apply_op"]


class Tensor:
    """A contiguous row-major float64 array with at most 4 axes."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if arr.ndim > 4:
            raise ShapeError(f"tensors are limited to 4 axes, got shape {arr.shape}")
        self.data = arr

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


class Parameter:
    """A trainable value with an accumulated gradient and a stable path.

    The path (e.g. ``"backbone.stage1.block0.conv1.weight"``) identifies the
    parameter in checkpoints and diagnostics and must be unique per model.
    """

    __slots__ = ("value", "grad", "path")

    def __init__(self, value, path: str):
        self.value = value if isinstance(value, Tensor) else Tensor(value)
        self.grad = Tensor(np.zeros_like(self.value.data))
        self.path = path

    def zero_grad(self) -> None:
        self.grad.data[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.path!r}, shape={self.value.shape})"


class _TapeEntry:
    __slots__ = ("output", "inputs", "backward_fn", "name")

    def __init__(self, output, inputs, backward_fn, name):
        self.output = output
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.name = name


_active = threading.local()


def _tape_stack():
    stack = getattr(_active, "stack", None)
    if stack is None:
        stack = []
        _active.stack = stack
    return stack


def current_tape():
    """The innermost active tape, or None when recording is off."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class GradTape:
    """Ordered record of executed differentiable ops.

    Use as a context manager; ops executed inside the block are recorded.
    Replaying backward in reverse execution order visits every recorded op
    exactly once.
    """

    def __init__(self):
        self.entries: list[_TapeEntry] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        assert stack and stack[-1] is self, "mismatched GradTape enter/exit"
        stack.pop()
        return False

    def __len__(self):
        return len(self.entries)


def apply_op(name, out_data, inputs, backward_fn):
    """Wrap an op result, recording it on the active tape if any.

    ``backward_fn(grad_out)`` must return one gradient array per input
    (None for inputs the op does not differentiate through).
    """
    out = Tensor(out_data)
    tape = current_tape()
    if tape is not None:
        tape.entries.append(_TapeEntry(out, tuple(inputs), backward_fn, name))
    return out


class GradientMap:
    """Read-only view of the gradients computed by a backward pass."""

    def __init__(self, grads):
        self._grads = grads

    def wrt(self, tensor: Tensor) -> np.ndarray:
        """Gradient w.r.t. ``tensor``; zeros if the loss never touched it."""
        g = self._grads.get(id(tensor))
        if g is None:
            return np.zeros_like(tensor.data)
        return np.asarray(g, dtype=np.float64)


def backward(tape: GradTape, output: Tensor, parameters=()) -> GradientMap:
    """Reverse-replay ``tape`` from scalar ``output``.

    Gradients are accumulated (+=) into each parameter's ``grad`` tensor;
    parameters unreachable from ``output`` are left untouched. Returns a
    :class:`GradientMap` for querying gradients of non-parameter tensors
    (e.g. model inputs).
    """
    if output.size != 1:
        raise ShapeError(f"backward needs a scalar output, got shape {output.shape}")
    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    for entry in reversed(tape.entries):
        g_out = grads.get(id(entry.output))
        if g_out is None:
            continue
        in_grads = entry.backward_fn(g_out)
        for tensor, g_in in zip(entry.inputs, in_grads):
            if g_in is None:
                continue
            key = id(tensor)
            held = grads.get(key)
            # rebind rather than += so read-only (broadcast) arrays are safe
            grads[key] = g_in if held is None else held + g_in
    for p in parameters:
        g = grads.get(id(p.value))
        if g is not None:
            p.grad.data += g
    return GradientMap(grads)
