"""Dense float64 kernel: primitives, reverse-mode tape, optimizers, gradient checking."""

from .gradcheck import GradCheckReport, grad_check
from .ops import (
    BatchNormState,
    activate,
    as_matrix,
    as_vector,
    batch_norm,
    l2_normalize_rows,
    linear,
    log_softmax,
    softmax,
    softmax_cross_entropy,
)
from .optim import AdamState, adam_update, sgd_update
from .tape import Tape, Var, backward

__all__ = [
    "AdamState",
    "BatchNormState",
    "GradCheckReport",
    "Tape",
    "Var",
    "activate",
    "adam_update",
    "as_matrix",
    "as_vector",
    "backward",
    "batch_norm",
    "grad_check",
    "l2_normalize_rows",
    "linear",
    "log_softmax",
    "sgd_update",
    "softmax",
    "softmax_cross_entropy",
]
