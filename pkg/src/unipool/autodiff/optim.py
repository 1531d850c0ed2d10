"""SGD with momentum and L2 weight decay."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .tensor import Parameter


def sgd_step(params: Iterable[Parameter], lr: float, momentum: float, weight_decay: float) -> None:
    """One in-place update, then clear the gradients.

    v <- momentum * v + grad + weight_decay * value
    value <- value - lr * v
    """
    for p in params:
        v = p.momentum_buffer
        v *= momentum
        v += p.grad
        if weight_decay:
            v += weight_decay * p.data
        p.data -= lr * v
        p.grad = np.zeros_like(p.data)


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()
