"""Gradient verification by central finite differences in float64."""

from __future__ import annotations

import numpy as np

from provnet.engine.tensor import Tensor


def grad_check(fn, *arrays, step: float = 1e-3, seed: int = 0) -> float:
    """Compare analytic and numeric gradients of ``fn`` at ``arrays``.

    ``fn`` maps Tensors to an output Tensor of any shape; the check
    contracts the output with a fixed random weighting so the full
    Jacobian is exercised through a scalar loss. Returns the max over all
    inputs and elements of |analytic - numeric| / max(|analytic|,
    |numeric|, 1e-8).
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    rng = np.random.default_rng(seed)
    probe = None

    def loss_of(values):
        nonlocal probe
        tensors = [Tensor(v, requires_grad=True) for v in values]
        out = fn(*tensors)
        if probe is None:
            probe = rng.standard_normal(out.shape)
        weighted = Tensor(
            np.asarray((out.data * probe).sum()), parents=(out,)
        )

        def _backward(g):
            out.accumulate_grad(probe * g)

        weighted._backward_fn = _backward
        return weighted, tensors

    loss, tensors = loss_of(arrays)
    loss.backward()
    analytic = [
        t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors
    ]

    worst = 0.0
    for i, base in enumerate(arrays):
        numeric = np.zeros_like(base)
        flat = base.reshape(-1)
        num_flat = numeric.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            plus, _ = loss_of(arrays)
            flat[j] = orig - step
            minus, _ = loss_of(arrays)
            flat[j] = orig
            num_flat[j] = (float(plus.data) - float(minus.data)) / (2 * step)
        denom = np.maximum(np.maximum(np.abs(analytic[i]), np.abs(numeric)), 1e-8)
        err = float((np.abs(analytic[i] - numeric) / denom).max())
        worst = max(worst, err)
    return worst
