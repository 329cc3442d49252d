from . import tensor as F
from .checkpoint import CheckpointError
from .gradcheck import EvaluationError, grad_check
from .layers import (
    LayerNorm,
    Linear,
    MlpStack,
    Module,
    Param,
    ResMLPBlock,
    gelu,
    layer_norm,
    linear_forward,
    softmax_row,
)
from .optim import Adam, SGDMomentum, clip_grad_norm
from .tensor import DimensionError, Tensor, no_grad

__all__ = [
    "F", "Tensor", "Param", "Module", "Linear", "LayerNorm", "MlpStack", "ResMLPBlock",
    "linear_forward", "layer_norm", "gelu", "softmax_row", "grad_check", "no_grad",
    "SGDMomentum", "Adam", "clip_grad_norm", "DimensionError", "EvaluationError",
    "CheckpointError",
]
