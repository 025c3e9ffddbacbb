"""First-order optimisers over name -> Tensor parameter dicts."""
from __future__ import annotations

import numpy as np


class SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params):
        for p in params.values():
            if p.grad is not None:
                p.data -= self.lr * p.grad


class Adam:
    def __init__(self, lr, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.betas, self.eps = lr, betas, eps
        self.state = {}

    def step(self, params):
        b1, b2 = self.betas
        for name, p in params.items():
            if p.grad is None:
                continue
            m, v, t = self.state.get(name, (np.zeros_like(p.data), np.zeros_like(p.data), 0))
            t += 1
            m = b1 * m + (1 - b1) * p.grad
            v = b2 * v + (1 - b2) * p.grad * p.grad
            p.data -= self.lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + self.eps)
            self.state[name] = (m, v, t)


def make(name, lr):
    if name == "sgd":
        return SGD(lr)
    if name == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer {name!r}")
