from . import autodiff
from .autodiff import Tensor, grad, no_grad
from .network import (
    Network,
    batch_input_gradient,
    input_gradient,
    load_checkpoint,
    save_checkpoint,
)
from .optim import SGD, NonFiniteGradient, sgd_step

__all__ = [
    "autodiff", "Tensor", "grad", "no_grad", "Network", "input_gradient",
    "batch_input_gradient", "save_checkpoint", "load_checkpoint", "SGD",
    "NonFiniteGradient", "sgd_step",
]
