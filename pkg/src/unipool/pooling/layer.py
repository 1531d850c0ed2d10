from __future__ import annotations

from typing import Optional

import numpy as np

from ..autodiff.tensor import Parameter, Tensor
from .functional import avg_pool, gated_pool, max_pool, mixed_pool, stride_pool
from .spec import PoolingSpec
from .universal import UniversalPoolState, universal_pool


class PoolLayer:
    """One pooling site: a PoolingSpec plus whatever parameters it owns."""

    def __init__(self, spec: PoolingSpec, channels: int, in_hw: tuple[int, int],
                 rng: Optional[np.random.Generator] = None):
        h, w = in_hw
        if spec.size > h or spec.size > w:
            raise ValueError(f"pooling size {spec.size} larger than spatial extent {h}x{w}")
        self.spec = spec
        self.channels = channels
        self.in_hw = (h, w)
        self.state: Optional[UniversalPoolState] = None
        self.params: dict[str, Parameter] = {}
        self.buffers: dict[str, np.ndarray] = {}
        k = spec.size * spec.size
        if spec.variant == "universal":
            self.state = UniversalPoolState.create(spec.b1, channels, spec.size, in_hw, rng)
            self.params = {f"b1.{n}": p for n, p in self.state.params.items()}
            self.buffers = {f"b1.{n}": b for n, b in self.state.buffers.items()}
        elif spec.variant == "mixed":
            self.params["mix"] = Parameter(np.zeros(1))
        elif spec.variant == "gated-ch":
            self.params["gate"] = Parameter(np.zeros((channels, k)))
        elif spec.variant == "gated-layer":
            self.params["gate"] = Parameter(np.zeros(k))

    def out_shape(self, in_shape: tuple[int, int, int]) -> tuple[int, int, int]:
        c, h, w = in_shape
        s = self.spec.size
        return (c, h // s, w // s)

    def __call__(self, x: Tensor, training: bool = True) -> tuple[Tensor, Optional[Tensor]]:
        spec = self.spec
        s = spec.size
        if spec.variant == "max":
            return max_pool(x, s), None
        if spec.variant == "avg":
            return avg_pool(x, s), None
        if spec.variant == "stride":
            return stride_pool(x, s, spec.offset), None
        if spec.variant == "mixed":
            return mixed_pool(x, s, self.params["mix"]), None
        if spec.variant == "gated-ch":
            return gated_pool(x, s, self.params["gate"], "channel"), None
        if spec.variant == "gated-layer":
            return gated_pool(x, s, self.params["gate"], "layer"), None
        return universal_pool(x, self.state, s, training)
