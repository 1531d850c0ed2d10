"""Block-wise pooling primitives with hand-written backward passes.

Every operator tiles the trailing two axes of an (N, C, H, W) tensor into
disjoint S x S blocks.  Trailing rows/columns that do not fill a whole block
are dropped; their gradient is zero.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import ops
from ..autodiff.ops import sigmoid_array
from ..autodiff.tensor import Tensor, make_result, note_branch


def _check_extent(x: Tensor, size: int) -> tuple[int, int]:
    if x.ndim != 4:
        raise ValueError(f"pooling expects an (N, C, H, W) tensor, got shape {x.shape}")
    h, w = x.shape[2:]
    if size < 1 or h < size or w < size:
        raise ValueError(f"pooling size {size} larger than spatial extent {h}x{w}")
    return h // size, w // size


def blocks_of(arr: np.ndarray, size: int) -> np.ndarray:
    """(N, C, H, W) -> (N, C, H//S, W//S, S*S), block entries in row-major order."""
    n, c, h, w = arr.shape
    hb, wb = h // size, w // size
    arr = arr[:, :, : hb * size, : wb * size]
    arr = arr.reshape(n, c, hb, size, wb, size).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(arr).reshape(n, c, hb, wb, size * size)


def unblock(arr: np.ndarray, size: int, h: int, w: int) -> np.ndarray:
    """Inverse of :func:`blocks_of`, zero-filling any dropped remainder."""
    n, c, hb, wb, _ = arr.shape
    out = arr.reshape(n, c, hb, wb, size, size).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, hb * size, wb * size)
    if (h, w) == (hb * size, wb * size):
        return np.ascontiguousarray(out)
    full = np.zeros((n, c, h, w), dtype=arr.dtype)
    full[:, :, : hb * size, : wb * size] = out
    return full


def to_blocks(x: Tensor, size: int) -> Tensor:
    _check_extent(x, size)
    h, w = x.shape[2:]
    return make_result("to_blocks", blocks_of(x.data, size), (x,), lambda g: (unblock(g, size, h, w),))


def from_blocks(xb: Tensor, size: int, h: int, w: int) -> Tensor:
    """Blocks back to an (N, C, h, w) map; positions outside the tiling are zero."""
    hb, wb = xb.shape[2:4]
    if xb.shape[4] != size * size or hb * size > h or wb * size > w:
        raise ValueError(f"from_blocks: blocks {xb.shape} do not fit a {h}x{w} map with size {size}")
    return make_result("from_blocks", unblock(xb.data, size, h, w), (xb,), lambda g: (blocks_of(g, size),))


def crop(x: Tensor, size: int) -> Tensor:
    """Drop the trailing rows/columns not covered by the block tiling."""
    hb, wb = _check_extent(x, size)
    h, w = x.shape[2:]
    if (hb * size, wb * size) == (h, w):
        return x

    def vjp(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[:, :, : hb * size, : wb * size] = g
        return (full,)

    return make_result("crop", x.data[:, :, : hb * size, : wb * size], (x,), vjp)


def max_pool(f: Tensor, size: int) -> Tensor:
    """Block maximum; ties go to the lowest row-major index in the block."""
    _check_extent(f, size)
    h, w = f.shape[2:]
    fb = blocks_of(f.data, size)
    idx = fb.argmax(axis=-1)[..., None]
    note_branch(idx)
    out = np.take_along_axis(fb, idx, axis=-1)[..., 0]

    def vjp(g):
        gb = np.zeros(fb.shape, dtype=g.dtype)
        np.put_along_axis(gb, idx, g[..., None], axis=-1)
        return (unblock(gb, size, h, w),)

    return make_result("max_pool", out, (f,), vjp)


def avg_pool(f: Tensor, size: int) -> Tensor:
    _check_extent(f, size)
    h, w = f.shape[2:]
    fb = blocks_of(f.data, size)
    k = size * size
    out = fb.sum(axis=-1) / k

    def vjp(g):
        gb = np.broadcast_to((g / k)[..., None], fb.shape)
        return (unblock(gb, size, h, w),)

    return make_result("avg_pool", out, (f,), vjp)


def stride_pool(f: Tensor, size: int, offset: tuple[int, int] = (0, 0)) -> Tensor:
    """Sample position ``offset`` of every block: o[p, q] = f[pS + r, qS + c]."""
    hb, wb = _check_extent(f, size)
    r, c = offset
    if not (0 <= r < size and 0 <= c < size):
        raise ValueError(f"stride offset {offset} outside [0, {size})")
    h, w = f.shape[2:]
    out = f.data[:, :, r : hb * size : size, c : wb * size : size]

    def vjp(g):
        full = np.zeros(f.shape, dtype=g.dtype)
        full[:, :, r : hb * size : size, c : wb * size : size] = g
        return (full,)

    return make_result("stride_pool", out, (f,), vjp)


def mixed_pool(f: Tensor, size: int, a: Tensor) -> Tensor:
    """sigmoid(a) * max_pool + (1 - sigmoid(a)) * avg_pool with a learnable scalar ``a``."""
    if a.size != 1:
        raise ValueError(f"mixed pooling weight must be a single scalar, got shape {a.shape}")
    s = ops.sigmoid(a)
    return ops.add(ops.mul(s, max_pool(f, size)), ops.mul(ops.sub(1.0, s), avg_pool(f, size)))


def gated_pool(f: Tensor, size: int, omega: Tensor, granularity: str = "channel") -> Tensor:
    """Gated max-average pooling.

    Per block b the gate is g = sigmoid(omega . vec(b)) and the output is
    g * max(b) + (1 - g) * mean(b).  ``omega`` has shape (C, S*S) for the
    per-channel form or (S*S,) for one gate shared by the whole layer.
    """
    _check_extent(f, size)
    n, c, h, w = f.shape
    k = size * size
    if granularity == "channel":
        if omega.shape != (c, k):
            raise ValueError(f"gated-channel weights must have shape {(c, k)}, got {omega.shape}")
        om = omega.data
    elif granularity == "layer":
        if omega.shape != (k,):
            raise ValueError(f"gated-layer weights must have length {k}, got shape {omega.shape}")
        om = np.broadcast_to(omega.data, (c, k))
    else:
        raise ValueError(f"granularity must be 'channel' or 'layer', got {granularity!r}")

    fb = blocks_of(f.data, size)
    idx = fb.argmax(axis=-1)[..., None]
    note_branch(idx)
    mx = np.take_along_axis(fb, idx, axis=-1)[..., 0]
    mean = fb.sum(axis=-1) / k
    z = np.einsum("nchwk,ck->nchw", fb, om)
    gate = sigmoid_array(z)
    out = gate * mx + (1.0 - gate) * mean

    def vjp(g):
        dz = g * (mx - mean) * gate * (1.0 - gate)
        dfb = np.broadcast_to(((1.0 - gate) * g / k)[..., None], fb.shape).copy()
        np.put_along_axis(dfb, idx, np.take_along_axis(dfb, idx, axis=-1) + (g * gate)[..., None], axis=-1)
        dfb += dz[..., None] * om[None, :, None, None, :]
        domega = np.einsum("nchw,nchwk->ck", dz, fb)
        if granularity == "layer":
            domega = domega.sum(axis=0)
        return unblock(dfb, size, h, w), domega

    return make_result("gated_pool", out, (f, omega), vjp)


def block_softmax(fbar: Tensor, size: int) -> Tensor:
    """Softmax over every disjoint S x S block; returns the covered region only."""
    hb, wb = _check_extent(fbar, size)
    h, w = fbar.shape[2:]
    xb = blocks_of(fbar.data, size)
    e = np.exp(xb - xb.max(axis=-1, keepdims=True))
    p = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        gb = blocks_of(g, size)
        dx = p * (gb - (gb * p).sum(axis=-1, keepdims=True))
        return (unblock(dx, size, h, w),)

    return make_result("block_softmax", unblock(p, size, hb * size, wb * size), (fbar,), vjp)


def weighted_block_sum(pi: Tensor, f: Tensor, size: int) -> Tensor:
    """o[p, q] = sum over block (p, q) of pi * f.

    ``pi`` covers the tiled region; ``f`` may carry an untiled remainder.
    """
    hb, wb = _check_extent(f, size)
    if pi.shape != f.shape[:2] + (hb * size, wb * size):
        raise ValueError(f"pooling weights {pi.shape} do not cover feature map {f.shape} with size {size}")
    h, w = f.shape[2:]
    pb = blocks_of(pi.data, size)
    fb = blocks_of(f.data, size)
    out = (pb * fb).sum(axis=-1)

    def vjp(g):
        g = g[..., None]
        return unblock(g * fb, size, hb * size, wb * size), unblock(g * pb, size, h, w)

    return make_result("weighted_block_sum", out, (pi, f), vjp)


def channel_linear(xb: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-channel dense layer on the last axis.

    xb: (N, C, ..., in); weight: (C, in, out) or (1, in, out) when shared
    across channels; bias: (C, out) or (1, out).  Channel c only ever reads
    channel c's features.
    """
    n, c = xb.shape[:2]
    cw, fin, fout = weight.shape
    if cw not in (1, c) or xb.shape[-1] != fin:
        raise ValueError(f"channel_linear: input {xb.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (cw, fout):
        raise ValueError(f"channel_linear: bias {bias.shape} does not match weight {weight.shape}")
    mid = xb.shape[2:-1]
    m = int(np.prod(mid)) if mid else 1
    x3 = xb.data.reshape(n, c, m, fin)
    out = x3 @ weight.data  # (N, C, M, out), weight broadcast over N
    if bias is not None:
        out = out + bias.data[None, :, None, :]
    out = out.reshape(xb.shape[:-1] + (fout,))
    inputs = (xb, weight) if bias is None else (xb, weight, bias)

    def vjp(g):
        g4 = g.reshape(n, c, m, fout)
        dx = (g4 @ weight.data.transpose(0, 2, 1)).reshape(xb.shape)
        xt = x3.transpose(1, 0, 2, 3).reshape(c, n * m, fin)
        gt = g4.transpose(1, 0, 2, 3).reshape(c, n * m, fout)
        dw = xt.transpose(0, 2, 1) @ gt
        db = gt.sum(axis=1)
        if cw == 1:
            dw = dw.sum(axis=0, keepdims=True)
            db = db.sum(axis=0, keepdims=True)
        grads = [dx, dw]
        if bias is not None:
            grads.append(db)
        return grads

    return make_result("channel_linear", out, inputs, vjp)
