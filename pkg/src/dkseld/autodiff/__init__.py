"""Minimal numpy tensor engine with reverse-mode autodiff."""
from . import functional
from .checkpoint import load_checkpoint, save_checkpoint
from .nn import (BatchNorm, Conv2d, DepthwiseConv1d, LayerNorm, Linear, Module,
                 MultiHeadSelfAttention, Parameter, mhsa)
from .optim import Adam, adam_step
from .tensor import Tensor, no_grad

__all__ = [
    "Adam", "BatchNorm", "Conv2d", "DepthwiseConv1d", "LayerNorm", "Linear", "Module",
    "MultiHeadSelfAttention", "Parameter", "Tensor", "adam_step", "functional",
    "load_checkpoint", "mhsa", "no_grad", "save_checkpoint",
]
