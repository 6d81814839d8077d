"""Minimal reverse-mode autodiff over dense numpy tensors."""

from . import blob, losses, ops
from .optim import SGD, Adam, Optimizer, make_optimizer, optimizer_step
from .tensor import Parameter, Tape, Tensor, backward, current_tape, is_grad_enabled, no_grad

__all__ = [
    "Adam", "Optimizer", "Parameter", "SGD", "Tape", "Tensor", "backward", "blob",
    "current_tape", "is_grad_enabled", "losses", "make_optimizer", "no_grad", "ops",
    "optimizer_step",
]
