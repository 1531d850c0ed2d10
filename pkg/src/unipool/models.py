"""CIFAR-scale VGG and ResNet backbones with configurable pooling sites.

``vgg`` and ``resnet`` follow the CIFAR-10 layer tables exactly.  ``tiny-vgg``
and ``tiny-resnet`` keep the same pooling placement with channel widths
divided by 8 and one conv (or one residual block) per stage; they exist for
desk-scale runs and are not configurations from the original experiments.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .autodiff import ops
from .autodiff.conv import batch_norm, conv2d, conv_output_size
from .autodiff.tensor import Parameter, Tensor, get_dtype
from .pooling import PoolLayer, PoolingSpec, parse_pool

ARCHITECTURES = ("vgg", "resnet", "tiny-vgg", "tiny-resnet")


@dataclass
class ModelConfig:
    architecture: str = "tiny-resnet"
    local_pool: str = "avg"
    global_pool: str = "avg"
    num_classes: int = 10
    input_shape: tuple[int, int, int] = (3, 32, 32)
    shared_b1: bool = False
    stride_offset: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}; expected one of {ARCHITECTURES}")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.stride_offset = tuple(int(v) for v in self.stride_offset)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass(frozen=True)
class LayerSpec:
    """Static description of one layer.

    kind is one of conv, batchnorm, relu, block, local_pool, global_pool,
    fc, flatten.  ``pool`` is a CLI pooling name (size is fixed at build time).
    """

    kind: str
    name: str
    out_channels: int = 0
    kernel: int = 3
    stride: int = 1
    padding: int = 1
    with_projection: bool = False
    pool: str = ""


def layer_specs(cfg: ModelConfig) -> list[LayerSpec]:
    arch = cfg.architecture
    specs: list[LayerSpec] = []
    if arch in ("vgg", "tiny-vgg"):
        widths = (64, 128, 256, 512, 512)
        repeats = (2, 2, 4, 4, 4)
        if arch == "tiny-vgg":
            widths = tuple(w // 8 for w in widths)
            repeats = (1,) * 5
        for g, (width, reps) in enumerate(zip(widths, repeats), start=1):
            for r in range(1, reps + 1):
                specs.append(LayerSpec("conv", f"conv{g}_{r}", width))
                specs.append(LayerSpec("batchnorm", f"bn{g}_{r}"))
                specs.append(LayerSpec("relu", f"relu{g}_{r}"))
            if g < 5:
                specs.append(LayerSpec("local_pool", f"pool{g}", pool=cfg.local_pool))
            else:
                specs.append(LayerSpec("global_pool", "pool5", pool=cfg.global_pool))
    else:
        div = 8 if arch == "tiny-resnet" else 1
        specs += [LayerSpec("conv", "conv1", 64 // div), LayerSpec("batchnorm", "bn1"), LayerSpec("relu", "relu1")]
        if arch == "resnet":
            stages = [("block2_1", 64), ("block2_2", 64), ("block3_1", 128), "pool1", ("block3_2", 128),
                      ("block4_1", 256), "pool2", ("block4_2", 256), ("block5_1", 512), "pool3", ("block5_2", 512)]
        else:
            stages = [("block2_1", 8), ("block3_1", 16), "pool1", ("block4_1", 32), "pool2", ("block5_1", 64), "pool3"]
        for item in stages:
            if isinstance(item, str):
                specs.append(LayerSpec("local_pool", item, pool=cfg.local_pool))
            else:
                specs.append(LayerSpec("block", item[0], item[1]))
        specs.append(LayerSpec("global_pool", "pool4", pool=cfg.global_pool))
    specs.append(LayerSpec("flatten", "flatten"))
    specs.append(LayerSpec("fc", "fc", cfg.num_classes))
    return specs


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    params: dict[str, Parameter]
    buffers: dict[str, np.ndarray]

    def __init__(self):
        self.params = {}
        self.buffers = {}

    def out_shape(self, in_shape):
        return in_shape

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        raise NotImplementedError


class Conv(Layer):
    def __init__(self, cin, cout, kernel, stride, padding, rng, bias=False):
        super().__init__()
        self.stride, self.padding = stride, padding
        fan_in = cin * kernel * kernel
        self.params["weight"] = Parameter(_uniform(rng, (cout, cin, kernel, kernel), fan_in))
        if bias:
            self.params["bias"] = Parameter(_uniform(rng, (cout,), fan_in))

    def out_shape(self, in_shape):
        _, h, w = in_shape
        cout, _, k, _ = self.params["weight"].shape
        return (cout, conv_output_size(h, k, self.stride, self.padding), conv_output_size(w, k, self.stride, self.padding))

    def __call__(self, x, training):
        return conv2d(x, self.params["weight"], self.params.get("bias"), self.stride, self.padding)


class BatchNorm(Layer):
    def __init__(self, channels):
        super().__init__()
        self.params["weight"] = Parameter(np.ones(channels))
        self.params["bias"] = Parameter(np.zeros(channels))
        self.buffers["running_mean"] = np.zeros(channels, dtype=get_dtype())
        self.buffers["running_var"] = np.ones(channels, dtype=get_dtype())

    def __call__(self, x, training):
        return batch_norm(x, self.params["weight"], self.params["bias"],
                          self.buffers["running_mean"], self.buffers["running_var"], training)


class ReLU(Layer):
    def __call__(self, x, training):
        return ops.relu(x)


class Flatten(Layer):
    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def __call__(self, x, training):
        return ops.flatten(x)


class FullyConnected(Layer):
    def __init__(self, fin, fout, rng):
        super().__init__()
        self.params["weight"] = Parameter(_uniform(rng, (fout, fin), fin))
        self.params["bias"] = Parameter(_uniform(rng, (fout,), fin))

    def out_shape(self, in_shape):
        return (self.params["weight"].shape[0],)

    def __call__(self, x, training):
        return ops.linear(x, self.params["weight"], self.params["bias"])


class BasicBlock(Layer):
    """conv-bn-relu-conv-bn plus shortcut (1x1 conv + bn when widths differ), then relu."""

    def __init__(self, cin, cout, rng, with_projection):
        super().__init__()
        self.parts: dict[str, Layer] = {
            "conv1": Conv(cin, cout, 3, 1, 1, rng),
            "bn1": BatchNorm(cout),
            "conv2": Conv(cout, cout, 3, 1, 1, rng),
            "bn2": BatchNorm(cout),
        }
        self.with_projection = with_projection
        if with_projection:
            self.parts["shortcut.conv"] = Conv(cin, cout, 1, 1, 0, rng)
            self.parts["shortcut.bn"] = BatchNorm(cout)
        elif cin != cout:
            raise ValueError(f"identity shortcut needs equal widths, got {cin} -> {cout}")
        for pname, part in self.parts.items():
            self.params.update({f"{pname}.{k}": v for k, v in part.params.items()})
            self.buffers.update({f"{pname}.{k}": v for k, v in part.buffers.items()})

    def out_shape(self, in_shape):
        return self.parts["conv2"].out_shape(self.parts["conv1"].out_shape(in_shape))

    def __call__(self, x, training):
        p = self.parts
        y = ops.relu(p["bn1"](p["conv1"](x, training), training))
        y = p["bn2"](p["conv2"](y, training), training)
        shortcut = p["shortcut.bn"](p["shortcut.conv"](x, training), training) if self.with_projection else x
        return ops.relu(ops.add(y, shortcut))


class PoolSite(Layer):
    def __init__(self, pool: PoolLayer):
        super().__init__()
        self.pool = pool
        self.params = dict(pool.params)
        self.buffers = dict(pool.buffers)

    def out_shape(self, in_shape):
        return self.pool.out_shape(in_shape)

    def __call__(self, x, training):
        return self.pool(x, training)


@dataclass
class Model:
    config: ModelConfig
    layers: list[tuple[str, Layer]] = field(default_factory=list)
    params: dict[str, Parameter] = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    pool_sites: list[int] = field(default_factory=list)
    shapes: list[tuple[int, ...]] = field(default_factory=list)

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def pool_layers(self) -> list[PoolLayer]:
        return [self.layers[i][1].pool for i in self.pool_sites]

    def forward(self, batch: Tensor, training: bool = True) -> tuple[Tensor, list[Optional[Tensor]]]:
        if tuple(batch.shape[1:]) != self.config.input_shape:
            raise ValueError(f"model expects inputs of shape (N, {self.config.input_shape}), got {batch.shape}")
        x = batch
        weights: list[Optional[Tensor]] = []
        for _, layer in self.layers:
            if isinstance(layer, PoolSite):
                x, pi = layer(x, training)
                weights.append(pi)
            else:
                x = layer(x, training)
        return x, weights

    __call__ = forward

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {name: p.data for name, p in self.params.items()}
        out.update(self.buffers)
        return out


def build_model(config: ModelConfig, seed: int = 0) -> Model:
    """Instantiate every layer, checking spatial extents along the way."""
    rng = np.random.default_rng(seed)
    model = Model(config)
    shape: tuple[int, ...] = config.input_shape
    for spec in layer_specs(config):
        c = shape[0]
        if spec.kind == "conv":
            layer: Layer = Conv(c, spec.out_channels, spec.kernel, spec.stride, spec.padding, rng)
        elif spec.kind == "batchnorm":
            layer = BatchNorm(c)
        elif spec.kind == "relu":
            layer = ReLU()
        elif spec.kind == "block":
            layer = BasicBlock(c, spec.out_channels, rng, with_projection=c != spec.out_channels)
        elif spec.kind in ("local_pool", "global_pool"):
            h, w = shape[1:]
            if spec.kind == "global_pool":
                if h != w:
                    raise ValueError(f"global pooling needs a square map, got {h}x{w}")
                size, site = h, "global"
            else:
                size, site = 2, "local"
            if h < size or w < size or h < 1:
                raise ValueError(f"spatial extent underflow at {spec.name}: {h}x{w} with pooling size {size}")
            pspec: PoolingSpec = parse_pool(spec.pool, size, site, shared=config.shared_b1,
                                            offset=config.stride_offset)
            layer = PoolSite(PoolLayer(pspec, c, (h, w), rng))
            model.pool_sites.append(len(model.layers))
        elif spec.kind == "flatten":
            layer = Flatten()
        elif spec.kind == "fc":
            layer = FullyConnected(shape[0], spec.out_channels, rng)
        else:  # pragma: no cover
            raise ValueError(f"unknown layer kind {spec.kind}")
        shape = layer.out_shape(shape)
        if any(s < 1 for s in shape):
            raise ValueError(f"spatial extent underflow after {spec.name}: {shape}")
        model.layers.append((spec.name, layer))
        model.shapes.append(tuple(shape))
        for k, v in layer.params.items():
            full = f"{spec.name}.{k}"
            v.name = full
            model.params[full] = v
        for k, v in layer.buffers.items():
            model.buffers[f"{spec.name}.{k}"] = v
    return model
