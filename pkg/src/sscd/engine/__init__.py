"""Minimal reverse-mode autodiff engine on numpy arrays."""

from .gradcheck import grad_check
from .losses import bce_change_loss, split_semantic_loss
from .ops import (
    add,
    batch_concat,
    batch_norm2d,
    batch_slice,
    channel_concat,
    channel_slice,
    channel_softmax,
    conv2d,
    correlation2d,
    max_pool2d,
    mul,
    relu,
    sum,
    upsample2x,
)
from .optim import Adam, AdamState, adam_step
from .tensor import ShapeError, Tape, Tensor, backward

__all__ = [
    "Adam",
    "AdamState",
    "ShapeError",
    "Tape",
    "Tensor",
    "adam_step",
    "add",
    "batch_concat",
    "batch_slice",
    "backward",
    "batch_norm2d",
    "bce_change_loss",
    "channel_concat",
    "channel_slice",
    "channel_softmax",
    "conv2d",
    "correlation2d",
    "grad_check",
    "max_pool2d",
    "mul",
    "relu",
    "split_semantic_loss",
    "sum",
    "upsample2x",
]
