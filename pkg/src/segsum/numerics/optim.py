"""Adam optimizer over named parameters."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .tensor import Parameter, TensorError


class Adam:
    """Standard Adam with bias correction.

    Moment buffers live on the parameters themselves, so a fresh Adam over
    existing parameters resumes from their stored state. Updates are
    deterministic functions of (parameters, gradients, step count).
    """

    def __init__(
        self,
        params: Iterable[Parameter],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params: Sequence[Parameter] = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise TensorError("adam: duplicate parameter names")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p in self.params:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            p.adam_m *= self.beta1
            p.adam_m += (1.0 - self.beta1) * g
            p.adam_v *= self.beta2
            p.adam_v += (1.0 - self.beta2) * g * g
            m_hat = p.adam_m / bc1
            v_hat = p.adam_v / bc2
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)
