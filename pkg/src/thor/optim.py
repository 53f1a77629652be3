"""SGD and Adam parameter updates."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, TensorError


class Optimizer:
    """Holds the parameter list; subclasses implement the update rule."""

    kind = "base"

    def __init__(self, params, lr: float):
        self.params = list(params)
        if not self.params:
            raise TensorError("optimizer needs at least one parameter")
        self.lr = float(lr)
        self.step_count = 0

    def _grads(self):
        gs = []
        for p in self.params:
            if p.grad is None:
                raise TensorError("optimizer step before backward: missing gradient")
            gs.append(p.grad)
        return gs

    def step(self):
        raise NotImplementedError

    def zero_grad(self):
        for p in self.params:
            p.grad = None


class SGD(Optimizer):
    kind = "sgd"

    def step(self):
        grads = self._grads()
        self.step_count += 1
        for p, g in zip(self.params, grads):
            p.data -= self.lr * g
        self.zero_grad()


class Adam(Optimizer):
    kind = "adam"

    def __init__(self, params, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        super().__init__(params, lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        grads = self._grads()
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            g *= g  # grad buffer is consumed by the update; reuse it
            g *= 1.0 - self.beta2
            v += g
            denom = np.sqrt(v, out=g)
            denom /= np.sqrt(bc2)
            denom += self.eps
            np.divide(m, denom, out=denom)
            denom *= self.lr / bc1
            p.data -= denom
        self.zero_grad()


def make_optimizer(kind: str, params, lr: float) -> Optimizer:
    if kind == "sgd":
        return SGD(params, lr)
    if kind == "adam":
        return Adam(params, lr)
    raise ValueError(f"unknown optimizer kind '{kind}'")
