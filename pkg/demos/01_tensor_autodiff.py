"""Tour of the tensor core: taped ops, reverse-mode gradients, Adam.

Builds a scalar expression, pulls its gradients off the tape, checks one
of them against a central finite difference, then fits a small linear
least-squares problem with the Adam stepper to show the full loop.
"""

import numpy as np

from oucopula import GradTape, Parameter, Tensor, backward
from oucopula import ops
from oucopula.optim import AdamState, adam_step

print("== taped expression and reverse-mode gradients ==")
rng = np.random.default_rng(7)
a = Tensor(rng.normal(size=(3, 4)))
b = Tensor(rng.normal(size=(3, 4)))

with GradTape() as tape:
    # mean( relu(a * b + a) ) as a single taped scalar
    out = ops.mean_all(ops.relu(ops.add(ops.mul(a, b), a)))
grads = backward(tape, out)
print(f"value          {out.item():+.6f}")
print(f"grad wrt a[0,0] {grads.wrt(a)[0, 0]:+.6f}")

h = 1e-6
nudged = a.data.copy()
nudged[0, 0] += h
hi = np.mean(np.maximum(nudged * b.data + nudged, 0.0))
nudged[0, 0] -= 2 * h
lo = np.mean(np.maximum(nudged * b.data + nudged, 0.0))
print(f"finite diff     {(hi - lo) / (2 * h):+.6f}  (should match the grad)")

print()
print("== Adam on linear least squares ==")
x = rng.normal(size=(64, 5))
true_w = np.array([1.0, -2.0, 0.5, 3.0, -1.5])
y = (x @ true_w + 0.01 * rng.normal(size=64)).reshape(-1, 1)

w = Parameter(np.zeros((1, 5)), path="demo.weight")
b = Parameter(np.zeros(1), path="demo.bias")
state = AdamState(lr=0.1)
for step in range(1, 201):
    w.zero_grad()
    b.zero_grad()
    with GradTape() as tape:
        pred = ops.linear(Tensor(x), w.value, b.value)
        err = ops.sub(pred, Tensor(y))
        loss = ops.mean_all(ops.mul(err, err))
    backward(tape, loss, parameters=[w, b])
    adam_step(state, [w, b])
    if step in (1, 10, 50, 200):
        print(f"step {step:3d}  loss {loss.item():.6f}")

print(f"recovered weights {np.round(w.value.data.ravel(), 3)}")
print(f"true weights      {true_w}")
