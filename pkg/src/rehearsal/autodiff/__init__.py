from .optim import AdamState, adam_step
from .tensor import ShapeError, Tensor, constant, grad, parameter

__all__ = ["AdamState", "ShapeError", "Tensor", "adam_step", "constant", "grad", "parameter"]
