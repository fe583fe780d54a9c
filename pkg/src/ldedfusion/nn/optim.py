from __future__ import annotations

from typing import List

import numpy as np

from .layers import Param


class SGD:
    def __init__(self, params: List[Param], lr: float = 1e-2):
        self.params = params
        self.lr = lr

    def step(self):
        for p in self.params:
            p.data -= (self.lr * p.grad).astype(p.data.dtype)


class Adam:
    def __init__(self, params: List[Param], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        scale = self.lr * np.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for p, m, v in zip(self.params, self.m, self.v):
            m *= b1
            m += (1 - b1) * p.grad
            v *= b2
            v += (1 - b2) * p.grad * p.grad
            p.data -= (scale * m / (np.sqrt(v) + self.eps)).astype(p.data.dtype)
