"""Minimal reverse-mode automatic differentiation over numpy arrays."""

from . import ops
from .gradcheck import grad_check
from .nn import BatchNorm2d, Conv2d, Dropout, Linear, Module, Parameter
from .tensor import GraphStateError, Tensor, grad_enabled, no_grad

__all__ = [
    "BatchNorm2d",
    "Conv2d",
    "Dropout",
    "GraphStateError",
    "Linear",
    "Module",
    "Parameter",
    "Tensor",
    "grad_check",
    "grad_enabled",
    "no_grad",
    "ops",
]
