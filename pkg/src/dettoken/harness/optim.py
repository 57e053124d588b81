from __future__ import annotations

import math

import numpy as np

from ..diffcore.tensor import Tensor


class AdamW:
    """Adam with decoupled weight decay; decay applies to matrices only."""

    def __init__(self, named_params: list[tuple[str, Tensor]], betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = [p for _, p in named_params]
        self.names = [n for n, _ in named_params]
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def grad_norm(self) -> float:
        return math.sqrt(sum(float(np.vdot(p.grad, p.grad)) for p in self.params if p.grad is not None))

    def clip(self, max_norm: float) -> float:
        norm = self.grad_norm()
        if max_norm > 0 and norm > max_norm:
            scale = max_norm / (norm + 1e-6)
            for p in self.params:
                if p.grad is not None:
                    p.grad = p.grad * np.asarray(scale, dtype=p.grad.dtype)
        return norm

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.b1, self.b2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:      # untouched this step (e.g. detector on a VQA-only batch)
                continue
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            if self.wd and p.ndim >= 2:
                p.data *= np.asarray(1 - lr * self.wd, dtype=p.dtype)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= np.asarray(lr, dtype=p.dtype) * update.astype(p.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
