"""A small reverse-mode autodiff engine over numpy arrays."""
from . import ops
from .nn import BatchNorm, Buffer, Conv1d, Conv2d, Module, Parameter
from .optim import Adam, LrSchedule, lr_at
from .tensor import GraphError, Tensor, as_tensor, backprop, no_grad

__all__ = [
    "ops", "no_grad", "Tensor", "as_tensor", "backprop", "GraphError", "Module", "Parameter", "Buffer",
    "Conv1d", "Conv2d", "BatchNorm", "Adam", "LrSchedule", "lr_at",
]
