"""Tour of the tensor engine: tapes, gradients, and the Adam optimizer.

Builds a tiny two-layer network on a tape, checks its reverse-mode
gradients against central finite differences, then fits a toy regression
with Adam.
"""

import numpy as np

from driftlab import Tape, AdamState, adam_step

rng = np.random.default_rng(0)

# -- gradients of a composed computation ------------------------------------

tape = Tape(dtype=np.float64)
x = tape.leaf(rng.normal(size=(8, 3)))
w1 = tape.leaf(rng.normal(size=(3, 5)) * 0.5)
w2 = tape.leaf(rng.normal(size=(5, 2)) * 0.5)
targets = rng.integers(0, 2, size=8)

hidden = x.matmul(w1).relu()
loss = tape.softmax_cross_entropy(hidden.matmul(w2), targets).mean()
grad_w1, grad_w2 = tape.gradient(loss, [w1, w2], keep=True)
print(f"loss = {loss.data[0]:.4f}")
print(f"|dL/dw1| = {np.abs(grad_w1).max():.4f}, "
      f"|dL/dw2| = {np.abs(grad_w2).max():.4f}")

# finite-difference spot check on one coordinate
h = 1e-6
w1_plus = w1.data.copy()
w1_plus[0, 0] += h
w1_minus = w1.data.copy()
w1_minus[0, 0] -= h


def forward(w1_val):
    t = Tape(dtype=np.float64)
    hid = t.leaf(x.data).matmul(t.leaf(w1_val)).relu()
    out = t.softmax_cross_entropy(hid.matmul(t.leaf(w2.data)), targets).mean()
    t.release()
    return float(out.data[0])


numeric = (forward(w1_plus) - forward(w1_minus)) / (2 * h)
print(f"finite difference dL/dw1[0,0] = {numeric:.8f}, "
      f"tape says {grad_w1[0, 0]:.8f}")

# -- Adam on a quadratic bowl -------------------------------------------------

theta = np.array([4.0, -3.0])
state = AdamState(lr=0.05)
for step in range(400):
    grad = 2.0 * (theta - np.array([1.0, 2.0]))
    theta, state = adam_step(theta, grad, state)
print(f"after {state.t} Adam steps: theta = {np.round(theta, 4)} "
      "(minimum at [1, 2])")
