"""Minimal reverse-mode autodiff over numpy arrays."""

from .conv import batch_norm, conv2d, conv_output_size
from .gradcheck import finite_diff_grad, relative_error
from .ops import (
    add,
    as_tensor,
    cross_entropy,
    div,
    exp,
    flatten,
    linear,
    log,
    matmul,
    mean,
    mul,
    neg,
    relu,
    reshape,
    scale,
    sigmoid,
    sub,
    sum,
    transpose,
)
from .optim import sgd_step, zero_grad
from .tensor import (
    Parameter,
    Tape,
    Tensor,
    backward,
    get_dtype,
    get_precision,
    no_grad,
    precision,
    set_precision,
)
