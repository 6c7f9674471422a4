"""Adam with classic L2 regularization (penalty folded into the gradient)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from provnet.errors import TrainingAborted


@dataclass
class AdamHyper:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


@dataclass
class AdamState:
    hyper: AdamHyper
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    @classmethod
    def init(cls, params: dict, hyper: AdamHyper) -> "AdamState":
        return cls(
            hyper=hyper,
            step_count=0,
            first_moment={k: np.zeros_like(v) for k, v in params.items()},
            second_moment={k: np.zeros_like(v) for k, v in params.items()},
        )


def adam_step(params: dict, grads: dict, state: AdamState) -> tuple[dict, AdamState]:
    """One Adam update over named parameters, in place.

    The L2 term is added to the raw gradient before the moment updates
    (classic Adam-with-L2, not decoupled decay). Aborts without touching
    any parameter if a gradient is non-finite.
    """
    h = state.hyper
    for name in grads:
        if not np.all(np.isfinite(grads[name])):
            raise TrainingAborted(f"non-finite gradient for parameter {name!r}")

    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - h.beta1**t
    bc2 = 1.0 - h.beta2**t
    for name, g in grads.items():
        p = params[name]
        if h.weight_decay:
            g = g + h.weight_decay * p
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= h.beta1
        m += (1.0 - h.beta1) * g
        v *= h.beta2
        v += (1.0 - h.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        p -= h.lr * m_hat / (np.sqrt(v_hat) + h.eps)
    return params, state
