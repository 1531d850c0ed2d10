"""Gradient-check helper shared by the operator tests."""

from __future__ import annotations

import numpy as np

from unipool.autodiff import Parameter, Tape, Tensor, backward, mul, no_grad
from unipool.autodiff import sum as tsum
from unipool.autodiff.gradcheck import relative_error
from unipool.autodiff.tensor import branch_log

STENCIL = {-2: 1.0, -1: -8.0, 1: 8.0, 2: -1.0}  # times 1 / 12h


def max_grad_error(fn, inputs, seed=0, h=1e-3, floor=1e-6, max_skip_fraction=0.25):
    """Worst relative error between backprop and finite differences.

    ``fn`` maps the input tensors to one output tensor.  The scalar objective
    is sum(fn(inputs) * R) for a fixed random R, so every output element
    contributes to every checked derivative.  The numeric side is the
    fourth-order stencil at h = 1e-3, which keeps truncation and round-off
    both well under 1e-8 on smooth pieces.

    An entry whose probes flip a ReLU mask or a max/argmax choice straddles a
    kink where the derivative is not defined by differences; it is skipped.
    More than ``max_skip_fraction`` skipped entries is itself a failure.
    """
    with no_grad():
        shape = fn(*inputs).shape
    proj = np.random.default_rng(seed).uniform(-1, 1, shape)

    def probe():
        with no_grad(), branch_log() as log:
            value = float((fn(*inputs).data * proj).sum())
        return value, list(log)

    for t in inputs:
        t.grad = np.zeros_like(t.data)
    with Tape() as tape:
        loss = tsum(mul(fn(*inputs), Tensor(proj)))
    backward(loss, tape)
    _, base_sig = probe()

    worst, checked, skipped = 0.0, 0, 0
    for t in inputs:
        flat = t.data.reshape(-1)
        analytic = t.grad.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            acc, kink = 0.0, False
            for k, c in STENCIL.items():
                flat[i] = original + k * h
                value, sig = probe()
                kink = kink or sig != base_sig
                acc += c * value
            flat[i] = original
            if kink:
                skipped += 1
                continue
            checked += 1
            numeric = acc / (12.0 * h)
            worst = max(worst, float(relative_error(analytic[i:i + 1], np.array([numeric]), floor)[0]))
    total = checked + skipped
    assert skipped <= max_skip_fraction * total, f"{skipped}/{total} entries straddle a kink"
    return worst


def params(*arrays):
    return [Parameter(np.array(a, dtype=np.float64)) for a in arrays]
