"""Convolution and batch normalization.

conv2d lowers to one batched matmul per call (one batch entry per group).
Columns are gathered from a channels-last copy of the input one kernel tap
at a time and scattered back the same way in the backward pass, so the
reduction order is fixed and results are reproducible bit for bit.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .tensor import Tensor, make_result


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """Cross-correlation of x[N,Cin,H,W] with weight[Cout,Cin/groups,kh,kw]."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and kernel, got {x.shape} and {weight.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: bad stride={stride} / padding={padding}")
    n, cin, h, w = x.shape
    cout, cg, kh, kw = weight.shape
    if cin % groups or cout % groups or cin // groups != cg:
        raise ValueError(
            f"conv2d: channel mismatch, input has {cin} channels but kernel {weight.shape} "
            f"expects {cg * groups} (groups={groups})"
        )
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: non-positive output extent {ho}x{wo} for input {h}x{w}, kernel {kh}x{kw}")
    og = cout // groups
    hp, wp = h + 2 * padding, w + 2 * padding
    ktaps = kh * kw

    # channels-last padded copy of the input: (N, Hp, Wp, Cin)
    xp = np.zeros((n, hp, wp, cin), dtype=x.data.dtype)
    xp[:, padding : padding + h, padding : padding + w, :] = x.data.transpose(0, 2, 3, 1)
    # im2col, one kernel tap at a time: cols is (G, N*Ho*Wo, kh*kw*cg)
    cols = np.empty((groups, n, ho, wo, kh, kw, cg), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            tap = xp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :]
            cols[:, :, :, :, i, j, :] = tap.reshape(n, ho, wo, groups, cg).transpose(3, 0, 1, 2, 4)
    cols = cols.reshape(groups, n * ho * wo, ktaps * cg)
    wmat = np.ascontiguousarray(
        weight.data.reshape(groups, og, cg, kh, kw).transpose(0, 3, 4, 2, 1)
    ).reshape(groups, ktaps * cg, og)
    out = cols @ wmat  # (G, N*Ho*Wo, og)
    out = out.reshape(groups, n, ho, wo, og).transpose(1, 0, 4, 2, 3).reshape(n, cout, ho, wo)
    if bias is not None:
        if bias.shape != (cout,):
            raise ValueError(f"conv2d: bias {bias.shape} does not match {cout} output channels")
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def vjp(g):
        gm = g.reshape(n, groups, og, ho, wo).transpose(1, 0, 3, 4, 2).reshape(groups, n * ho * wo, og)
        dw = (cols.transpose(0, 2, 1) @ gm).reshape(groups, kh, kw, cg, og)
        dw = dw.transpose(0, 4, 3, 1, 2).reshape(cout, cg, kh, kw)
        dcols = (gm @ wmat.transpose(0, 2, 1)).reshape(groups, n, ho, wo, kh, kw, cg)
        dxp = np.zeros((n, hp, wp, groups, cg), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, :, :, :, i, j, :].transpose(
                    1, 2, 3, 0, 4
                )
        dx = dxp[:, padding : padding + h, padding : padding + w].reshape(n, h, w, cin).transpose(0, 3, 1, 2)
        grads = [np.ascontiguousarray(dx), np.ascontiguousarray(dw)]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return make_result("conv2d", out, inputs, vjp)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization of x[N,C,H,W] over (N,H,W).

    In training mode batch statistics are used and the running buffers are
    updated in place (running variance with the unbiased estimate).
    """
    if x.ndim != 4:
        raise ValueError(f"batch_norm expects a 4-D input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"batch_norm: affine params {gamma.shape}/{beta.shape} for {c} channels")
    axes = (0, 2, 3)
    count = x.size // c
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * (var * count / max(count - 1, 1))
    else:
        mu = running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * inv_std[None, :, None, None]
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def vjp(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gamma.data[None, :, None, None]
        if training:
            dx = (
                dxhat
                - dxhat.mean(axis=axes)[None, :, None, None]
                - xhat * (dxhat * xhat).mean(axis=axes)[None, :, None, None]
            ) * inv_std[None, :, None, None]
        else:
            dx = dxhat * inv_std[None, :, None, None]
        return dx, dgamma, dbeta

    return make_result("batch_norm", out, (x, gamma, beta), vjp)
