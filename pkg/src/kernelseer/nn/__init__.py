"""Minimal neural-network engine: layers, reverse-mode gradients, Adam."""

from .autograd import Var, as_var
from .layers import (
    Conv1dParams,
    LstmCellParams,
    bilstm_forward,
    conv1d_forward,
    cross_entropy_loss,
    dense_forward,
    dropout,
    lstm_cell_step,
    lstm_forward,
    softmax,
)
from .optim import AdamState, adam_step, clip_global_norm

__all__ = [
    "AdamState",
    "Conv1dParams",
    "LstmCellParams",
    "Var",
    "adam_step",
    "as_var",
    "bilstm_forward",
    "clip_global_norm",
    "conv1d_forward",
    "cross_entropy_loss",
    "dense_forward",
    "dropout",
    "lstm_cell_step",
    "lstm_forward",
    "softmax",
]
