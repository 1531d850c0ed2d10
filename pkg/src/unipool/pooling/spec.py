"""Pooling configuration types and the stable command-line names for them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

VARIANTS = ("max", "avg", "stride", "mixed", "gated-ch", "gated-layer", "universal")
B1_KINDS = ("local_fc", "global_fc", "global_conv")

DEFAULT_CONV_LAYERS = ((3, 8, 1), (3, 1, 1))


@dataclass(frozen=True)
class B1Spec:
    """Architecture of the network that produces pre-softmax pooling scores.

    ``conv_layers`` is a sequence of (kernel_size, out_channels, stride); the
    last entry must emit one channel.  ``hidden_width=None`` means the default:
    S*S for local FC, H*W/4 for global FC.
    """

    kind: str
    num_layers: int = 1
    hidden_width: Optional[int] = None
    conv_layers: tuple[tuple[int, int, int], ...] = DEFAULT_CONV_LAYERS
    shared: bool = False

    def __post_init__(self):
        if self.kind not in B1_KINDS:
            raise ValueError(f"unknown B1 kind {self.kind!r}; expected one of {B1_KINDS}")
        if self.kind != "global_conv" and self.num_layers not in (1, 2):
            raise ValueError(f"FC pooling networks have 1 or 2 layers, got {self.num_layers}")
        if self.hidden_width is not None and self.hidden_width < 1:
            raise ValueError("hidden_width must be positive")
        if self.kind == "global_conv":
            if not self.conv_layers:
                raise ValueError("global_conv needs at least one layer")
            for k, ch, s in self.conv_layers:
                if k < 1 or k % 2 == 0:
                    raise ValueError(f"conv kernel size must be odd to preserve extent, got {k}")
                if s != 1:
                    raise ValueError("conv pooling network layers must use stride 1")
                if ch < 1:
                    raise ValueError("conv channel count must be positive")
            if self.conv_layers[-1][1] != 1:
                raise ValueError("the last conv layer must emit a single channel")


@dataclass(frozen=True)
class PoolingSpec:
    variant: str
    size: int
    stride: Optional[int] = None
    offset: tuple[int, int] = (0, 0)
    b1: Optional[B1Spec] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown pooling variant {self.variant!r}; expected one of {VARIANTS}")
        if self.size < 1:
            raise ValueError(f"pooling size must be positive, got {self.size}")
        if self.stride is None:
            object.__setattr__(self, "stride", self.size)
        if self.stride != self.size:
            raise ValueError(f"stride ({self.stride}) must equal size ({self.size}): blocks must tile disjointly")
        r, c = self.offset
        if not (0 <= r < self.size and 0 <= c < self.size):
            raise ValueError(f"stride offset {self.offset} outside [0, {self.size})")
        if self.variant == "universal" and self.b1 is None:
            raise ValueError("universal pooling needs a B1Spec")
        if self.variant != "universal" and self.b1 is not None:
            raise ValueError(f"{self.variant} pooling takes no B1Spec")

    @property
    def name(self) -> str:
        return pool_name(self)


_B1_SHORT = {"fc1": ("fc", 1), "fc2": ("fc", 2), "conv": ("conv", 0)}


def parse_pool(name: str, size: int, site: str = "local", shared: bool = False,
               offset: tuple[int, int] = (0, 0)) -> PoolingSpec:
    """Build a PoolingSpec from a CLI name such as ``universal:fc2`` or ``gated-ch``.

    ``site`` decides whether an FC pooling network works per block
    (``local``) or over the whole map (``global``).
    """
    if site not in ("local", "global"):
        raise ValueError(f"site must be 'local' or 'global', got {site!r}")
    name = name.strip()
    if name.startswith("universal"):
        _, _, arch = name.partition(":")
        arch = arch or "fc1"
        if arch not in _B1_SHORT:
            raise ValueError(f"unknown universal pooling network {arch!r}; expected fc1, fc2 or conv")
        family, layers = _B1_SHORT[arch]
        if family == "conv":
            if site != "global":
                raise ValueError("universal:conv is only defined for the global pooling site")
            b1 = B1Spec("global_conv", shared=shared)
        else:
            b1 = B1Spec("local_fc" if site == "local" else "global_fc", num_layers=layers, shared=shared)
        return PoolingSpec("universal", size, b1=b1)
    if name not in VARIANTS:
        raise ValueError(f"unknown pooling {name!r}")
    return PoolingSpec(name, size, offset=offset if name == "stride" else (0, 0))


def pool_name(spec: PoolingSpec) -> str:
    if spec.variant != "universal":
        return spec.variant
    b1 = spec.b1
    if b1.kind == "global_conv":
        return "universal:conv"
    return f"universal:fc{b1.num_layers}"


@dataclass(frozen=True)
class Table3Row:
    indicator: str
    local: str
    global_: str = field(metadata={"name": "global"})


# Pooling grid compared in the CIFAR-10 experiments.
TABLE3_ROWS = (
    Table3Row("V1", "max", "max"),
    Table3Row("V2", "avg", "avg"),
    Table3Row("V3", "stride", "avg"),
    Table3Row("V4", "mixed", "mixed"),
    Table3Row("V5", "gated-ch", "gated-ch"),
    Table3Row("V6", "gated-layer", "gated-layer"),
    Table3Row("P1", "universal:fc1", "universal:fc1"),
    Table3Row("P2", "universal:fc1", "universal:fc2"),
    Table3Row("P3", "universal:fc2", "universal:fc2"),
    Table3Row("P4", "universal:fc1", "universal:conv"),
    Table3Row("P5", "universal:fc2", "universal:conv"),
)
