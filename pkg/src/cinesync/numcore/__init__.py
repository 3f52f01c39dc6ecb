"""Minimal numpy tensor engine: autodiff, layers, AdamW, seeded streams."""
from . import nn, rng
from .optim import AdamW, AdamWState, adamw_step, clip_grad_norm, warmup_cosine
from .tensor import (
    NonFiniteError,
    ShapeError,
    Tensor,
    as_tensor,
    clip,
    concat,
    cross_entropy,
    exp,
    gelu,
    getitem,
    l2_normalize,
    layer_norm,
    log,
    log_softmax,
    matmul,
    mean,
    mse,
    no_grad,
    pad_axis,
    relu,
    sigmoid,
    silu,
    softmax,
    sqrt,
    stack,
    tanh,
    tsum,
)

__all__ = [
    "AdamW", "AdamWState", "NonFiniteError", "ShapeError", "Tensor", "adamw_step", "as_tensor",
    "clip", "clip_grad_norm", "concat", "cross_entropy", "exp", "gelu", "getitem", "l2_normalize",
    "layer_norm", "log", "log_softmax", "matmul", "mean", "mse", "nn", "no_grad", "pad_axis",
    "relu", "rng", "sigmoid", "silu", "softmax", "sqrt", "stack", "tanh", "tsum", "warmup_cosine",
]
