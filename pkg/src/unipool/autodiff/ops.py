"""Differentiable primitives.

Shapes must match exactly; the only broadcasting allowed is a single-element
operand against a full tensor.  Anything else is a ``ValueError`` naming both
shapes, since a silent broadcast would hide pooling-block bugs.
"""

from __future__ import annotations

from typing import Optional, Sequence, Union

import numpy as np

from .tensor import Tensor, get_dtype, make_result, note_branch, recording_branches

Operand = Union[Tensor, float, int, np.ndarray]


def as_tensor(x: Operand) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_binary(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    """Undo scalar broadcasting in a gradient."""
    if g.shape == t.shape:
        return g
    return np.asarray(g.sum()).reshape(t.shape)


def _out_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    if a.shape == b.shape:
        return a.shape
    return a.shape if b.size == 1 and a.size != 1 else b.shape


def _scalar_view(t: Tensor, other: Tensor) -> np.ndarray:
    # a single-element operand is applied as a bare scalar
    if t.shape != other.shape and t.size == 1:
        return t.data.reshape(())
    return t.data


def add(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary("add", a, b)
    out = _scalar_view(a, b) + _scalar_view(b, a)
    shape = _out_shape(a, b)
    out = np.broadcast_to(out, shape) if out.shape != shape else out
    return make_result("add", out, (a, b), lambda g: (_reduce_to(g, a), _reduce_to(g, b)))


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary("sub", a, b)
    out = _scalar_view(a, b) - _scalar_view(b, a)
    shape = _out_shape(a, b)
    out = np.broadcast_to(out, shape) if out.shape != shape else out
    return make_result("sub", out, (a, b), lambda g: (_reduce_to(g, a), _reduce_to(-g, b)))


def mul(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary("mul", a, b)
    av, bv = _scalar_view(a, b), _scalar_view(b, a)
    out = av * bv
    shape = _out_shape(a, b)
    out = np.broadcast_to(out, shape) if out.shape != shape else out
    return make_result("mul", out, (a, b), lambda g: (_reduce_to(g * bv, a), _reduce_to(g * av, b)))


def div(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary("div", a, b)
    av, bv = _scalar_view(a, b), _scalar_view(b, a)
    out = av / bv
    shape = _out_shape(a, b)
    out = np.broadcast_to(out, shape) if out.shape != shape else out

    def vjp(g):
        return _reduce_to(g / bv, a), _reduce_to(-g * av / (bv * bv), b)

    return make_result("div", out, (a, b), vjp)


def neg(a: Operand) -> Tensor:
    a = as_tensor(a)
    return make_result("neg", -a.data, (a,), lambda g: (-g,))


def scale(a: Operand, s: float) -> Tensor:
    a = as_tensor(a)
    s = float(s)
    return make_result("scale", a.data * s, (a,), lambda g: (g * s,))


def exp(a: Operand) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_result("exp", out, (a,), lambda g: (g * out,))


def log(a: Operand) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise FloatingPointError("log of non-positive value")
    return make_result("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a: Operand) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)
    if recording_branches():
        note_branch(np.packbits(a.data > 0))
    return make_result("relu", out, (a,), lambda g: (g * (out > 0),))


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    """Overflow-free logistic function."""
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Operand) -> Tensor:
    a = as_tensor(a)
    s = sigmoid_array(a.data)
    return make_result("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def sum(a: Operand, axis: Optional[Union[int, Sequence[int]]] = None) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape),)

    return make_result("sum", out, (a,), vjp)


def mean(a: Operand, axis: Optional[Union[int, Sequence[int]]] = None) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return scale(sum(a, axis), 1.0 / count)


def reshape(a: Operand, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)
    return make_result("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Operand, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return make_result("transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def flatten(a: Operand) -> Tensor:
    a = as_tensor(a)
    return reshape(a, (a.shape[0], -1))


def matmul(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner extents differ, {a.shape} x {b.shape}")
    out = a.data @ b.data
    return make_result("matmul", out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x: Operand, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` with weight stored as (out_features, in_features)."""
    x = as_tensor(x)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ValueError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
        out = out + bias.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def vjp(g):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return make_result("linear", out, inputs, vjp)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy over the batch, computed via log-sum-exp."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n, k = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"cross_entropy: labels must lie in [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    loss = -logp[np.arange(n), labels].mean()

    def vjp(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (p * (g / n),)

    return make_result("cross_entropy", np.asarray(loss, dtype=get_dtype()), (logits,), vjp)
