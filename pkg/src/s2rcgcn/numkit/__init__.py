"""Dense float64 tensors, reverse-mode differentiation and primitive layers."""

from . import ops
from .gradcheck import check_gradients, numeric_grad, relative_error
from .layers import Affine, BatchNorm, Conv1d, Conv2d, Module
from .optim import Adam
from .rng import make_rng
from .tensor import Tensor, no_grad

__all__ = [
    "Adam",
    "Affine",
    "BatchNorm",
    "Conv1d",
    "Conv2d",
    "Module",
    "Tensor",
    "check_gradients",
    "make_rng",
    "no_grad",
    "numeric_grad",
    "ops",
    "relative_error",
]
