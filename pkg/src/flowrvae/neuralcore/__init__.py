"""Small float64 autodiff engine with GRU kernels and Adam."""
from . import tensor as ops
from .backend import available_backends, backend_name, use_backend
from .gradcheck import check_gradients, numerical_grad, relative_error
from .layers import (GruCell, Linear, Module, gru_autoregressive, gru_autoregressive_reference,
                     gru_recurrence, gru_sequence, gru_step)
from .optim import Adam, AdamState, adam_step
from .tensor import Tensor, no_grad

__all__ = [
    "Adam", "AdamState", "GruCell", "Linear", "Module", "Tensor", "adam_step",
    "available_backends", "backend_name", "check_gradients", "gru_autoregressive",
    "gru_autoregressive_reference", "gru_recurrence", "gru_sequence", "gru_step",
    "no_grad", "numerical_grad", "ops", "relative_error", "use_backend",
]
