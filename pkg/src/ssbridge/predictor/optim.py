from __future__ import annotations

import numpy as np


class Adam:
    """Adam on a flat parameter vector, updated in place."""

    def __init__(self, n: int, lr=2e-4, betas=(0.9, 0.999), eps=1e-8, dtype=np.float32):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = np.zeros(n, dtype=dtype)
        self.v = np.zeros(n, dtype=dtype)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        g = grad.astype(self.m.dtype, copy=False)
        self.m *= self.b1
        self.m += (1.0 - self.b1) * g
        self.v *= self.b2
        self.v += (1.0 - self.b2) * (g * g)
        lr_t = self.lr * np.sqrt(1.0 - self.b2 ** self.t) / (1.0 - self.b1 ** self.t)
        params -= (lr_t * self.m / (np.sqrt(self.v) + self.eps)).astype(params.dtype)
