"""Dense-tensor substrate: arrays, the DualTape, primitive ops, gradcheck."""

from .tape import Grads, Tape, Var, inject_backward_fault
from .tensor import (
    as_tensor,
    default_dtype,
    get_precision,
    precision,
    set_checked,
    set_precision,
    zeros,
)

__all__ = [
    "Grads",
    "Tape",
    "Var",
    "inject_backward_fault",
    "as_tensor",
    "default_dtype",
    "get_precision",
    "precision",
    "set_checked",
    "set_precision",
    "zeros",
]
