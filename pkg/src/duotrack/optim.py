"""Adam with the inverse-square-root warmup learning-rate schedule."""

from __future__ import annotations

import numpy as np

from .autodiff import Parameter


def warmup_lr(step: int, d_model: int, warmup: int) -> float:
    """lr = d_model^-0.5 * min(step^-0.5, step * warmup^-1.5); peak at step == warmup."""
    if step < 1:
        raise ValueError("schedule step starts at 1")
    return d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


class Adam:
    """Standard Adam with bias correction; lr supplied per step."""

    def __init__(self, params: list[Parameter], beta1=0.9, beta2=0.98, eps=1e-8):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {p.name: np.zeros_like(p.data) for p in params}
        self.v = {p.name: np.zeros_like(p.data) for p in params}
        self.t = 0

    def step(self, lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[p.name] = b1 * self.m[p.name] + (1 - b1) * g
            v = self.v[p.name] = b2 * self.v[p.name] + (1 - b2) * g * g
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
