"""Minimal reverse-mode differentiable-array engine."""

from .core import (
    DiffArray,
    Tape,
    abs_,
    add,
    as_diff,
    backward,
    concat,
    div,
    get_default_dtype,
    getitem,
    is_grad_enabled,
    mean,
    mul,
    neg,
    no_grad,
    power,
    reshape,
    set_default_dtype,
    square,
    sub,
    sum_,
    transpose,
)
from .gradcheck import GradCheckReport, gradient_check
from .nn import (
    adaptive_avg_pool2d,
    batch_norm,
    conv2d,
    cosine_similarity,
    graph_aggregate,
    prelu,
    vector_norm,
)
from .optim import SGD, sgd_step

__all__ = [
    "DiffArray", "Tape", "GradCheckReport", "SGD",
    "abs_", "add", "as_diff", "backward", "concat", "div", "get_default_dtype", "getitem",
    "is_grad_enabled", "mean", "mul", "neg", "no_grad", "power", "reshape", "set_default_dtype",
    "square", "sub", "sum_", "transpose", "gradient_check", "adaptive_avg_pool2d", "batch_norm",
    "conv2d", "cosine_similarity", "graph_aggregate", "prelu", "vector_norm", "sgd_step",
]
