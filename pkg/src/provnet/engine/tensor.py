"""Reverse-mode autodiff over dense numpy arrays.

A Tensor wraps an (n, c, h, w) or (n, f) array together with an optional
gradient and the closure that propagates an upstream gradient to its
parents. Graphs are built by the functional ops in ``provnet.engine.ops``
and released after ``backward``.
"""

from __future__ import annotations

import numpy as np

from provnet.errors import UsageError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in parents
        )
        self._parents = tuple(parents)
        self._backward_fn = backward_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self):
        """Backpropagate from a scalar loss through the recorded graph."""
        if self.data.size != 1:
            raise UsageError("backward requires a scalar loss tensor")
        if not self._parents and self._backward_fn is None and not self.requires_grad:
            raise UsageError("backward called on a tensor with no recorded graph")

        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)

    def detach(self):
        return Tensor(self.data, requires_grad=False)
