from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import ConfigurationError
from .nn import Parameter


def adam_step(params: Sequence[Parameter], grads: Sequence[np.ndarray | None], lr: float,
              step: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place.

    ``step`` is the 1-based update count used for bias correction.  Moments
    live on each parameter and start at zero.
    """
    if lr <= 0:
        raise ConfigurationError(f"learning rate must be positive, got {lr}")
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    for p, g in zip(params, grads):
        if g is None:
            continue
        if p.adam_m is None:
            p.adam_m = np.zeros_like(p.data)
            p.adam_v = np.zeros_like(p.data)
        p.adam_m *= beta1
        p.adam_m += (1.0 - beta1) * g
        p.adam_v *= beta2
        p.adam_v += (1.0 - beta2) * g * g
        mhat = p.adam_m / c1
        vhat = p.adam_v / c2
        p.data = (p.data - lr * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype)


class Adam:
    def __init__(self, params: Sequence[Parameter], lr: float = 5e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8):
        if lr <= 0:
            raise ConfigurationError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        adam_step(self.params, [p.grad for p in self.params], self.lr, self.t,
                  self.beta1, self.beta2, self.eps)
