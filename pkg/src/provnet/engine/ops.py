"""Differentiable layer primitives: exactly what the three networks need.

All ops take and return :class:`Tensor` and register a backward closure on
the output. Gradients for a parent are only computed when that parent
requires them, so frozen backbones cost nothing on the backward pass.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from provnet.engine.tensor import Tensor
from provnet.errors import ConfigError, DataError


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation plus bias over an (n, c, h, w) input."""
    n, c, h, w = x.shape
    oc, ic, kh, kw = weight.shape
    if ic != c:
        raise ConfigError(f"conv2d channel mismatch: input has {c}, kernel expects {ic}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ConfigError(f"conv2d output dims non-positive: {(ho, wo)}")

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (n, ho, wo, c*kh*kw) column matrix shared by forward and backward
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * ho * wo, c * kh * kw
    )
    w2 = weight.data.reshape(oc, -1)
    out = cols @ w2.T + bias.data
    out = out.reshape(n, ho, wo, oc).transpose(0, 3, 1, 2)

    out_t = Tensor(np.ascontiguousarray(out), parents=(x, weight, bias))

    def _backward(g):
        gcols = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, oc)
        if weight.requires_grad:
            weight.accumulate_grad((gcols.T @ cols).reshape(weight.shape))
        if bias.requires_grad:
            bias.accumulate_grad(gcols.sum(axis=0))
        if x.requires_grad:
            dcols = (gcols @ w2).reshape(n, ho, wo, c, kh, kw)
            dxp = np.zeros(
                (n, c, h + 2 * padding, w + 2 * padding), dtype=x.data.dtype
            )
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            if padding:
                dxp = dxp[:, :, padding:-padding, padding:-padding]
            x.accumulate_grad(dxp)

    out_t._backward_fn = _backward
    return out_t


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
    update_running: bool = True,
) -> Tensor:
    """Per-channel batch normalization with running-statistics tracking."""
    n, c, h, w = x.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ConfigError(f"batchnorm2d expects gamma/beta of length {c}")

    if train:
        m = n * h * w
        if m <= 1:
            raise ConfigError("batchnorm2d train mode needs batch*h*w > 1")
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        if update_running:
            unbiased = var * m / (m - 1)
            running_mean *= 1 - momentum
            running_mean += momentum * mean
            running_var *= 1 - momentum
            running_var += momentum * unbiased
    else:
        mean = running_mean
        var = running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    out_t = Tensor(out, parents=(x, gamma, beta))

    def _backward(g):
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            scale = (gamma.data * inv_std)[None, :, None, None]
            if train:
                m = n * h * w
                g_mean = g.mean(axis=(0, 2, 3))[None, :, None, None]
                gx_mean = (g * xhat).mean(axis=(0, 2, 3))[None, :, None, None]
                x.accumulate_grad(scale * (g - g_mean - xhat * gx_mean))
            else:
                x.accumulate_grad(scale * g)

    out_t._backward_fn = _backward
    return out_t


def pool2d(x: Tensor, kind: str, window: int = 2) -> Tensor:
    """Non-overlapping max or average pooling (stride == window)."""
    if kind not in ("max", "avg"):
        raise ConfigError(f"unknown pool kind {kind!r}")
    n, c, h, w = x.shape
    if h % window or w % window:
        raise ConfigError(
            f"pool2d needs spatial dims divisible by {window}, got {(h, w)}"
        )
    ho, wo = h // window, w // window
    tiles = x.data.reshape(n, c, ho, window, wo, window).transpose(0, 1, 2, 4, 3, 5)
    tiles = tiles.reshape(n, c, ho, wo, window * window)

    if kind == "max":
        idx = tiles.argmax(axis=-1)
        out = np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0]
    else:
        out = tiles.mean(axis=-1)

    out_t = Tensor(out, parents=(x,))

    def _backward(g):
        if not x.requires_grad:
            return
        dtiles = np.zeros((n, c, ho, wo, window * window), dtype=x.data.dtype)
        if kind == "max":
            np.put_along_axis(dtiles, idx[..., None], g[..., None], axis=-1)
        else:
            dtiles[...] = (g / (window * window))[..., None]
        dx = dtiles.reshape(n, c, ho, wo, window, window).transpose(0, 1, 2, 4, 3, 5)
        x.accumulate_grad(dx.reshape(n, c, h, w))

    out_t._backward_fn = _backward
    return out_t


def global_avgpool(x: Tensor) -> Tensor:
    """Spatial mean per channel, output shape (n, c, 1, 1)."""
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)
    out_t = Tensor(out, parents=(x,))

    def _backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.broadcast_to(g / (h * w), x.shape).copy())

    out_t._backward_fn = _backward
    return out_t


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map out = x @ W.T + b over an (n, in_features) batch."""
    if x.data.ndim != 2:
        raise ConfigError(f"linear expects a 2-D batch, got shape {x.shape}")
    of, inf = weight.shape
    if x.shape[1] != inf:
        raise ConfigError(
            f"linear width mismatch: input {x.shape[1]}, weights expect {inf}"
        )
    out = x.data @ weight.data.T + bias.data
    out_t = Tensor(out, parents=(x, weight, bias))

    def _backward(g):
        if weight.requires_grad:
            weight.accumulate_grad(g.T @ x.data)
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=0))
        if x.requires_grad:
            x.accumulate_grad(g @ weight.data)

    out_t._backward_fn = _backward
    return out_t


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out_t = Tensor(np.where(mask, x.data, 0), parents=(x,))

    def _backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * mask)

    out_t._backward_fn = _backward
    return out_t


def flatten(x: Tensor) -> Tensor:
    n = x.shape[0]
    shape = x.shape
    out_t = Tensor(x.data.reshape(n, -1), parents=(x,))

    def _backward(g):
        if x.requires_grad:
            x.accumulate_grad(g.reshape(shape))

    out_t._backward_fn = _backward
    return out_t


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two (n, f) batches along the feature axis."""
    if a.shape[0] != b.shape[0]:
        raise ConfigError("concat requires matching batch sizes")
    wa = a.shape[1]
    out_t = Tensor(np.concatenate([a.data, b.data], axis=1), parents=(a, b))

    def _backward(g):
        if a.requires_grad:
            a.accumulate_grad(g[:, :wa])
        if b.requires_grad:
            b.accumulate_grad(g[:, wa:])

    out_t._backward_fn = _backward
    return out_t


def tensor_sum(x: Tensor) -> Tensor:
    out_t = Tensor(np.asarray(x.data.sum()), parents=(x,))

    def _backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.full(x.shape, g, dtype=x.data.dtype))

    out_t._backward_fn = _backward
    return out_t


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stabilized row softmax on a plain array."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> tuple[Tensor, np.ndarray]:
    """Mean cross-entropy over a batch; returns (scalar loss, probabilities)."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise DataError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= k:
        raise DataError(f"label out of range [0, {k})")
    probs = softmax(logits.data)
    loss_val = -np.log(probs[np.arange(n), labels]).mean()
    loss = Tensor(np.asarray(loss_val, dtype=logits.dtype), parents=(logits,))

    def _backward(g):
        if logits.requires_grad:
            d = probs.copy()
            d[np.arange(n), labels] -= 1.0
            logits.accumulate_grad(d * (g / n))

    loss._backward_fn = _backward
    return loss, probs
