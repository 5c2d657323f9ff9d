"""Functional namespace over the tape primitives (``from evidentia.diffcore import ops``)."""
from evidentia.diffcore.tape import (  # noqa: F401
    abs_ as abs,
    add,
    concat,
    conv2d,
    digamma,
    div,
    dropout,
    exp,
    gelu,
    getitem,
    layer_norm,
    lgamma,
    linear,
    log,
    matmul,
    mean,
    mul,
    neg,
    power,
    reshape,
    sigmoid,
    softmax,
    softplus,
    sqrt,
    sub,
    sum_ as sum,
    transpose,
)
