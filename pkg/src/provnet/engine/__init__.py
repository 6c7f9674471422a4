from provnet.engine.adam import AdamHyper, AdamState, adam_step
from provnet.engine.checkpoint import load_checkpoint, save_checkpoint
from provnet.engine.gradcheck import grad_check
from provnet.engine.ops import (
    batchnorm2d,
    concat,
    conv2d,
    flatten,
    global_avgpool,
    linear,
    pool2d,
    relu,
    softmax,
    softmax_cross_entropy,
    tensor_sum,
)
from provnet.engine.tensor import Tensor

__all__ = [
    "AdamHyper",
    "AdamState",
    "Tensor",
    "adam_step",
    "batchnorm2d",
    "concat",
    "conv2d",
    "flatten",
    "global_avgpool",
    "grad_check",
    "linear",
    "load_checkpoint",
    "pool2d",
    "relu",
    "save_checkpoint",
    "softmax",
    "softmax_cross_entropy",
    "tensor_sum",
]
