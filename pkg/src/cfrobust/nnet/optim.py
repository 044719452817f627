from __future__ import annotations

import numpy as np


class NonFiniteGradient(ValueError):
    """Raised when an update would apply NaN/Inf gradients."""


class SGD:
    """Momentum SGD with L2 weight decay folded into the gradient.

    v <- momentum * v + (g + weight_decay * p);  p <- p - lr * v
    """

    def __init__(self, params, lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads=None) -> None:
        if grads is None:
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        if len(grads) != len(self.params):
            raise ValueError("one gradient per parameter required")
        for p, g in zip(self.params, grads):
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient("non-finite gradient; step rejected")
        for p, g, v in zip(self.params, grads, self.velocity):
            d = g + self.weight_decay * p.data if self.weight_decay else g
            v *= self.momentum
            v += d
            p.data = p.data - self.lr * v

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def sgd_step(net, grads, lr: float, momentum: float = 0.0, weight_decay: float = 0.0, state=None):
    """Functional single step; ``state`` carries velocities between calls."""
    opt = state if state is not None else SGD(net.parameters(), lr, momentum, weight_decay)
    opt.lr, opt.momentum, opt.weight_decay = lr, momentum, weight_decay
    opt.step([np.asarray(g) for g in grads])
    return opt
