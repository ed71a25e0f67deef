"""Dense tensors with reverse-mode differentiation, sized for the CMTC networks."""
from . import ops
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .core import (
    ShapeError,
    Tensor,
    as_tensor,
    backward,
    get_default_dtype,
    is_grad_enabled,
    no_grad,
    set_default_dtype,
    topological_order,
)
from .nn import BatchNorm1d, Conv2d, Linear, Module, Parameter
from .ops import (
    activation,
    avg_pool2d,
    concat,
    conv2d,
    elementwise,
    leaky_relu,
    matmul,
    sigmoid,
    softmax,
    upsample_bilinear,
)
from .optim import Adam, NonFiniteGradientError, OptimState, adam_step

__all__ = [
    "ops", "Tensor", "ShapeError", "as_tensor", "backward", "no_grad", "is_grad_enabled",
    "get_default_dtype", "set_default_dtype", "topological_order", "Module", "Parameter",
    "Conv2d", "Linear", "BatchNorm1d", "Adam", "OptimState", "adam_step",
    "NonFiniteGradientError", "save_checkpoint", "load_checkpoint", "CheckpointError",
    "activation", "avg_pool2d", "concat", "conv2d", "elementwise", "leaky_relu", "matmul",
    "sigmoid", "softmax", "upsample_bilinear",
]
