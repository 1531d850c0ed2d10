"""Universal pooling: a per-channel network scores every position, a block
softmax turns the scores into convex weights, and each block is reduced to
the weighted sum of its features.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..autodiff import ops
from ..autodiff.conv import batch_norm, conv2d
from ..autodiff.tensor import Parameter, Tensor, get_dtype
from .functional import block_softmax, channel_linear, from_blocks, to_blocks, weighted_block_sum
from .spec import B1Spec


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class UniversalPoolState:
    """Parameters of one pooling layer's scoring network.

    FC weights are stored as (C, in, out) and biases as (C, out); with
    ``spec.shared`` the leading axis is 1 and one network serves every
    channel.  Conv layers are grouped convolutions with one group per
    channel, followed by batch norm and ReLU except after the last layer.
    """

    spec: B1Spec
    channels: int
    size: int
    in_hw: tuple[int, int]
    params: dict[str, Parameter] = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def create(cls, spec: B1Spec, channels: int, size: int, in_hw: tuple[int, int],
               rng: Optional[np.random.Generator] = None) -> "UniversalPoolState":
        """Hidden layers get fan-in uniform weights; the output layer starts at
        zero so the layer begins as exact average pooling."""
        rng = rng if rng is not None else np.random.default_rng(0)
        state = cls(spec, channels, size, tuple(in_hw))
        cw = 1 if spec.shared else channels
        h, w = in_hw
        if spec.kind == "global_fc" and (h != size or w != size):
            raise ValueError(f"global FC pooling needs a square map equal to the block, got {h}x{w} with size {size}")
        if spec.kind in ("local_fc", "global_fc"):
            k = size * size
            if spec.num_layers == 1:
                dims = [k, k]
            else:
                default_hidden = k if spec.kind == "local_fc" else max(1, k // 4)
                dims = [k, spec.hidden_width or default_hidden, k]
            for i in range(len(dims) - 1):
                last = i == len(dims) - 2
                fin, fout = dims[i], dims[i + 1]
                wv = np.zeros((cw, fin, fout)) if last else _uniform(rng, (cw, fin, fout), fin)
                bv = np.zeros((cw, fout)) if last else _uniform(rng, (cw, fout), fin)
                state.params[f"fc{i + 1}.weight"] = Parameter(wv)
                state.params[f"fc{i + 1}.bias"] = Parameter(bv)
        else:
            prev = 1
            n_layers = len(spec.conv_layers)
            for i, (ksize, ch, _) in enumerate(spec.conv_layers):
                last = i == n_layers - 1
                shape = (cw * ch, prev, ksize, ksize)
                fan_in = prev * ksize * ksize
                wv = np.zeros(shape) if last else _uniform(rng, shape, fan_in)
                bv = np.zeros(cw * ch) if last else _uniform(rng, cw * ch, fan_in)
                state.params[f"conv{i + 1}.weight"] = Parameter(wv)
                state.params[f"conv{i + 1}.bias"] = Parameter(bv)
                if not last:
                    state.params[f"bn{i + 1}.weight"] = Parameter(np.ones(cw * ch))
                    state.params[f"bn{i + 1}.bias"] = Parameter(np.zeros(cw * ch))
                    state.buffers[f"bn{i + 1}.running_mean"] = np.zeros(cw * ch, dtype=get_dtype())
                    state.buffers[f"bn{i + 1}.running_var"] = np.ones(cw * ch, dtype=get_dtype())
                prev = ch
        for name, p in state.params.items():
            p.name = name
        return state

    def zero_(self) -> None:
        """Set every parameter to zero (batch-norm scales included)."""
        for p in self.params.values():
            p.data[...] = 0.0

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())


def b1_forward(f: Tensor, state: UniversalPoolState, training: bool = True) -> Tensor:
    """Pre-softmax scores, same shape as ``f``, computed channel by channel."""
    spec = state.spec
    if f.ndim != 4 or f.shape[1] != state.channels:
        raise ValueError(f"pooling network built for {state.channels} channels, got input {f.shape}")
    n, c, h, w = f.shape
    p = state.params
    if spec.kind in ("local_fc", "global_fc"):
        if spec.kind == "global_fc" and (h, w) != state.in_hw:
            raise ValueError(f"global FC pooling network expects {state.in_hw} maps, got {(h, w)}")
        size = state.size
        x = to_blocks(f, size)
        n_layers = spec.num_layers
        for i in range(1, n_layers + 1):
            x = channel_linear(x, p[f"fc{i}.weight"], p[f"fc{i}.bias"])
            if i < n_layers:
                x = ops.relu(x)
        return from_blocks(x, size, h, w)

    if spec.shared:
        x = ops.reshape(f, (n * c, 1, h, w))
        groups = 1
    else:
        x, groups = f, c
    n_layers = len(spec.conv_layers)
    for i, (ksize, _, _) in enumerate(spec.conv_layers, start=1):
        x = conv2d(x, p[f"conv{i}.weight"], p[f"conv{i}.bias"], stride=1, padding=ksize // 2, groups=groups)
        if i < n_layers:
            x = batch_norm(x, p[f"bn{i}.weight"], p[f"bn{i}.bias"],
                           state.buffers[f"bn{i}.running_mean"], state.buffers[f"bn{i}.running_var"],
                           training=training)
            x = ops.relu(x)
    return ops.reshape(x, (n, c, h, w)) if spec.shared else x


def universal_pool(f: Tensor, state: UniversalPoolState, size: Optional[int] = None,
                   training: bool = True) -> tuple[Tensor, Tensor]:
    """Return the pooled map and the pooling weights that produced it."""
    size = state.size if size is None else size
    pi = block_softmax(b1_forward(f, state, training), size)
    return weighted_block_sum(pi, f, size), pi
