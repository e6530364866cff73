"""Adam, RMSProp and a reduce-on-plateau learning-rate schedule."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 2e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            m_hat = self.m[k] / c1
            v_hat = self.v[k] / c2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


class RMSProp:
    """RMSProp with heavy-ball momentum and coupled (L2) weight decay."""

    def __init__(self, params: dict[str, Tensor], lr: float = 2e-4, alpha: float = 0.99,
                 eps: float = 1e-8, momentum: float = 0.9, weight_decay: float = 1e-3):
        self.params = params
        self.lr = lr
        self.alpha = alpha
        self.eps = eps
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.sq = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.buf = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self.sq[k] = self.alpha * self.sq[k] + (1.0 - self.alpha) * g * g
            update = g / (np.sqrt(self.sq[k]) + self.eps)
            if self.momentum:
                self.buf[k] = self.momentum * self.buf[k] + update
                update = self.buf[k]
            p.data -= self.lr * update

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def make_optimizer(name: str, params, lr: float, weight_decay: float | None = None):
    if name == "adam":
        return Adam(params, lr=lr, weight_decay=weight_decay or 0.0)
    if name == "rmsprop":
        return RMSProp(params, lr=lr, weight_decay=1e-3 if weight_decay is None else weight_decay)
    raise ValueError(f"unknown optimizer {name!r}")


class PlateauScheduler:
    """Cut the learning rate when a maximized metric stalls.

    After more than ``patience`` consecutive epochs without beating the best
    value by ``min_delta``, the rate is multiplied by ``factor`` and the
    counter restarts.
    """

    def __init__(self, lr: float, patience: int = 10, factor: float = 0.1, min_delta: float = 1e-4):
        if not 0.0 < factor < 1.0:
            raise ValueError("plateau factor must lie in (0, 1)")
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.min_delta = min_delta
        self.best = -np.inf
        self.bad_epochs = 0
        self.n_reductions = 0

    def step(self, metric: float) -> float:
        if metric > self.best + self.min_delta:
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs > self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
                self.n_reductions += 1
        return self.lr
