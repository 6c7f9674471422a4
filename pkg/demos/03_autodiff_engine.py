"""Demo: the from-scratch autodiff engine.

Builds a tiny conv net graph by hand, differentiates a loss through it,
and verifies one gradient against central finite differences. Also shows
Adam pulling a quadratic toward its minimum.

Run:  python3 demos/03_autodiff_engine.py
"""

import numpy as np

from provnet.engine import ops
from provnet.engine.adam import AdamHyper, AdamState, adam_step
from provnet.engine.gradcheck import grad_check
from provnet.engine.tensor import Tensor

rng = np.random.default_rng(0)

# forward + backward through conv -> relu -> pool -> linear -> cross-entropy
x = Tensor(rng.normal(size=(2, 1, 8, 8)))
w = Tensor(rng.normal(size=(4, 1, 3, 3)) * 0.3, requires_grad=True)
b = Tensor(np.zeros(4), requires_grad=True)
wl = Tensor(rng.normal(size=(3, 4 * 4 * 4)) * 0.1, requires_grad=True)
bl = Tensor(np.zeros(3), requires_grad=True)

h = ops.pool2d(ops.relu(ops.conv2d(x, w, b, padding=1)), "max")
logits = ops.linear(ops.flatten(h), wl, bl)
loss, probs = ops.softmax_cross_entropy(logits, np.array([0, 2]))
loss.backward()

print("loss = %.4f,  probs rows sum to %s" % (loss.data, probs.sum(axis=1)))
print("conv weight grad norm  = %.4f" % np.linalg.norm(w.grad))
print("linear weight grad norm = %.4f" % np.linalg.norm(wl.grad))

err = grad_check(
    lambda x_, w_, b_: ops.conv2d(x_, w_, b_, padding=1),
    rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3),
)
print("conv2d finite-difference check: max rel err = %.2e" % err)

# Adam on f(p) = ||p - target||^2
target = np.array([1.0, -2.0, 3.0])
params = {"p": np.zeros(3)}
state = AdamState.init(params, AdamHyper(lr=0.1))
for step in range(200):
    grads = {"p": 2 * (params["p"] - target)}
    adam_step(params, grads, state)
print("Adam after 200 steps: p = %s (target %s)" % (np.round(params["p"], 3), target))
