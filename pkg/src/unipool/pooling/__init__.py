"""Standard, mixed/gated and universal pooling operators."""

from .functional import (
    avg_pool,
    block_softmax,
    blocks_of,
    channel_linear,
    crop,
    from_blocks,
    gated_pool,
    max_pool,
    mixed_pool,
    stride_pool,
    to_blocks,
    unblock,
    weighted_block_sum,
)
from .layer import PoolLayer
from .spec import TABLE3_ROWS, VARIANTS, B1Spec, PoolingSpec, parse_pool, pool_name
from .universal import UniversalPoolState, b1_forward, universal_pool
