"""Tensor container, gradient tape and reverse-mode backward pass."""

from __future__ import annotations

import contextlib
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

_PRECISION_BITS = 64
_DTYPES = {32: np.float32, 64: np.float64}


def get_dtype() -> type:
    return _DTYPES[_PRECISION_BITS]


def get_precision() -> int:
    return _PRECISION_BITS


def set_precision(bits: int) -> None:
    """Select 32- or 64-bit floating point for every tensor created afterwards."""
    global _PRECISION_BITS
    if bits not in _DTYPES:
        raise ValueError(f"precision must be 32 or 64, got {bits}")
    _PRECISION_BITS = bits


@contextlib.contextmanager
def precision(bits: int) -> Iterator[None]:
    previous = _PRECISION_BITS
    set_precision(bits)
    try:
        yield
    finally:
        set_precision(previous)


class Tensor:
    """Dense row-major array that can take part in a gradient tape.

    Tensors are treated as immutable: operations always allocate new buffers.
    The only sanctioned in-place mutation is an optimizer writing into a
    :class:`Parameter`.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.ascontiguousarray(data, dtype=get_dtype())
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # Operator sugar; the implementations live in ops.py.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


class Parameter(Tensor):
    """Trainable tensor with an attached momentum buffer."""

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)
        self.momentum_buffer = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


VJP = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    vjp: VJP


@dataclass
class Tape:
    """Append-only record of differentiable operations.

    Use as a context manager; operations executed inside the block whose
    inputs require gradients are appended in execution order, which is a
    topological order by construction.
    """

    nodes: list[Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _ACTIVE_TAPES.pop()
        assert popped is self

    def record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, vjp: VJP) -> None:
        self.nodes.append(Node(op, inputs, output, vjp))

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)

    def __len__(self) -> int:
        return len(self.nodes)


_ACTIVE_TAPES: list[Tape] = []


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording (e.g. for evaluation)."""
    saved = list(_ACTIVE_TAPES)
    _ACTIVE_TAPES.clear()
    try:
        yield
    finally:
        _ACTIVE_TAPES.extend(saved)


_BRANCH_LOG: Optional[list[int]] = None


@contextlib.contextmanager
def branch_log() -> Iterator[list[int]]:
    """Collect a fingerprint of every piecewise branch taken (ReLU masks,
    max-pool argmaxes) while the block runs.

    Two evaluations with equal logs lie on the same smooth piece of the
    function, which is what a finite-difference check needs.
    """
    global _BRANCH_LOG
    previous, _BRANCH_LOG = _BRANCH_LOG, []
    try:
        yield _BRANCH_LOG
    finally:
        _BRANCH_LOG = previous


def recording_branches() -> bool:
    return _BRANCH_LOG is not None


def note_branch(selector: np.ndarray) -> None:
    if _BRANCH_LOG is not None:
        _BRANCH_LOG.append(zlib.crc32(np.ascontiguousarray(selector).tobytes()))


def make_result(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], vjp: VJP) -> Tensor:
    """Wrap an op's output buffer and record it on the active tape if needed."""
    data = np.asarray(data, dtype=get_dtype())
    if not np.isfinite(data).all():
        raise FloatingPointError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    tape = active_tape()
    out.requires_grad = tape is not None and any(t.requires_grad for t in inputs)
    if out.requires_grad:
        tape.record(op, inputs, out, vjp)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Intermediate gradients are kept only for the duration of the sweep.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    produced = {id(node.output) for node in tape.nodes}
    if id(loss) not in produced:
        raise ValueError("loss was not produced on this tape")
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key not in produced:
                leaves[key] = inp
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    for key, leaf in leaves.items():
        g = grads[key].reshape(leaf.shape)
        if leaf.grad is None:
            leaf.grad = np.array(g, dtype=leaf.data.dtype)
        else:
            leaf.grad = leaf.grad + g
