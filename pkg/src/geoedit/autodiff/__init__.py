"""Reverse-mode autodiff: tape tensors, modules, optimizers, checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .module import Module, Parameter, uniform_init
from .optim import Adam
from .rng import Rng
from .tensor import (
    Tensor,
    add,
    add_bias,
    add_channel_bias,
    as_tensor,
    backward,
    concat,
    constant,
    conv2d,
    gather_tokens,
    matmul,
    mse,
    mul,
    permute,
    reciprocal,
    relu,
    reshape,
    scale,
    scale_tokens,
    scatter_tokens,
    sigmoid,
    slice_last,
    softmax_rows,
    sub,
    tanh,
    tmean,
    tsqrt,
    tsum,
    upsample2,
)

__all__ = [
    "Adam",
    "Module",
    "Parameter",
    "Rng",
    "Tensor",
    "add",
    "add_bias",
    "add_channel_bias",
    "as_tensor",
    "backward",
    "concat",
    "constant",
    "conv2d",
    "gather_tokens",
    "load_checkpoint",
    "matmul",
    "mse",
    "mul",
    "permute",
    "reciprocal",
    "relu",
    "reshape",
    "save_checkpoint",
    "scale",
    "scale_tokens",
    "scatter_tokens",
    "sigmoid",
    "slice_last",
    "softmax_rows",
    "sub",
    "tanh",
    "tmean",
    "tsqrt",
    "tsum",
    "uniform_init",
    "upsample2",
]
