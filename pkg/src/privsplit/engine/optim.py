"""First-order optimizers over lists of Parameters."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from ..errors import ConfigError, UsageError
from .tensor import Parameter


class Optimizer:
    def __init__(self, params: Iterable[Parameter], lr: float):
        self.params = list(params)
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.lr = lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def _grads(self):
        for p in self.params:
            if p.grad is None:
                raise UsageError(f"parameter {getattr(p, 'name', '?')} has no gradient")
        return [p.grad for p in self.params]

    def step(self) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    """Plain or momentum SGD (``momentum=0`` gives ``w <- w - lr*g``)."""

    def __init__(self, params, lr: float, momentum: float = 0.0):
        super().__init__(params, lr)
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, g, v in zip(self.params, self._grads(), self.velocity):
            if self.momentum:
                v *= self.momentum
                v += g
                g = v
            p.data -= (self.lr * g).astype(p.data.dtype, copy=False)


class Adam(Optimizer):
    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        super().__init__(params, lr)
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        grads = self._grads()
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= update.astype(p.data.dtype, copy=False)


def make_optimizer(params, kind: str, lr: float) -> Optimizer:
    if kind == "sgd":
        return SGD(params, lr)
    if kind == "sgd-momentum":
        return SGD(params, lr, momentum=0.9)
    if kind == "adam":
        return Adam(params, lr)
    raise ConfigError(f"unknown optimizer {kind!r}")


def optimizer_step(params, kind: str, lr: float, state: Optimizer | None = None) -> Optimizer:
    """One update; pass the returned optimizer back in to carry momentum/Adam state."""
    opt = state if state is not None else make_optimizer(params, kind, lr)
    opt.step()
    return opt
