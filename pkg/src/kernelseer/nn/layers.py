"""Layer functions the sequence models are assembled from.

All functions accept numpy arrays or :class:`Var` and return :class:`Var`.
Weights follow the row-vector convention: ``y = x @ W + b``.
LSTM gates are packed in the order input, forget, candidate, output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError, EmptyInputError, InputTooShortError, ParameterError, TokenIndexError
from . import autograd as ag
from .autograd import Var, as_var

PROB_FLOOR = 1e-12


@dataclass
class LstmCellParams:
    """One LSTM cell: ``weight`` is (input_size + hidden_size, 4 * hidden_size)."""

    weight: Var
    bias: Var

    def __post_init__(self):
        self.weight = as_var(self.weight)
        self.bias = as_var(self.bias)
        rows, cols = self.weight.shape
        if cols % 4 or self.bias.shape != (cols,) or rows <= cols // 4:
            raise DimensionError(
                f"inconsistent LSTM weights {self.weight.shape} and bias {self.bias.shape}"
            )

    @property
    def hidden_size(self) -> int:
        return self.weight.shape[1] // 4

    @property
    def input_size(self) -> int:
        return self.weight.shape[0] - self.hidden_size


@dataclass
class Conv1dParams:
    """``weight`` is (kernel_size * in_channels, num_filters), taps-major."""

    weight: Var
    bias: Var
    kernel_size: int
    stride: int = 1

    def __post_init__(self):
        self.weight = as_var(self.weight)
        self.bias = as_var(self.bias)
        if self.kernel_size < 1 or self.stride < 1:
            raise ParameterError("kernel_size and stride must be >= 1")
        if self.weight.shape[0] % self.kernel_size:
            raise DimensionError(
                f"weight rows {self.weight.shape[0]} not a multiple of kernel_size {self.kernel_size}"
            )

    @property
    def num_filters(self) -> int:
        return self.weight.shape[1]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[0] // self.kernel_size


def conv_output_length(t: int, kernel_size: int, stride: int) -> int:
    if t < kernel_size:
        raise InputTooShortError(f"sequence length {t} shorter than kernel size {kernel_size}")
    return (t - kernel_size) // stride + 1


def dense_forward(x, weight, bias) -> Var:
    x, weight, bias = as_var(x), as_var(weight), as_var(bias)
    if x.shape[-1] != weight.shape[0] or bias.shape[-1] != weight.shape[1]:
        raise DimensionError(
            f"dense input shape {x.shape} incompatible with weight shape {weight.shape}"
            f" and bias shape {bias.shape}"
        )
    return ag.matmul(x, weight) + bias


def lstm_cell_step(x_t, h_prev, c_prev, params: LstmCellParams, x_proj=None) -> tuple[Var, Var]:
    """Advance one LSTM step; inputs may carry a leading batch axis.

    ``x_proj`` lets callers pass a precomputed ``x_t @ W_x`` when the same
    input is fed at every step.
    """
    h_prev, c_prev = as_var(h_prev), as_var(c_prev)
    n_in, hidden = params.input_size, params.hidden_size
    if h_prev.shape[-1] != hidden or c_prev.shape[-1] != hidden:
        raise DimensionError(
            f"state shapes {h_prev.shape}/{c_prev.shape} do not match hidden size {hidden}"
        )
    if x_proj is None:
        x_t = as_var(x_t)
        if x_t.shape[-1] != n_in:
            raise DimensionError(f"input shape {x_t.shape} does not match input size {n_in}")
        x_proj = ag.matmul(x_t, params.weight[:n_in])
    z = x_proj + ag.matmul(h_prev, params.weight[n_in:]) + params.bias
    i = ag.sigmoid(z[..., :hidden])
    f = ag.sigmoid(z[..., hidden : 2 * hidden])
    g = ag.tanh(z[..., 2 * hidden : 3 * hidden])
    o = ag.sigmoid(z[..., 3 * hidden :])
    c = f * c_prev + i * g
    h = o * ag.tanh(c)
    return h, c


def lstm_forward(
    sequence: list,
    params: LstmCellParams,
    h0=None,
    c0=None,
    reverse: bool = False,
    input_mask=None,
    recurrent_mask=None,
    constant_input: bool = False,
) -> tuple[list[Var], tuple[Var, Var]]:
    """Unroll a cell over ``sequence``; returns per-position states in input order.

    Masks are inverted-dropout multipliers held fixed for the whole sequence.
    With ``constant_input`` every element is assumed identical and the input
    projection is computed once.
    """
    if not sequence:
        raise EmptyInputError("empty input sequence")
    hidden = params.hidden_size
    lead = as_var(sequence[0]).shape[:-1]
    h = as_var(np.zeros(lead + (hidden,))) if h0 is None else as_var(h0)
    c = as_var(np.zeros(lead + (hidden,))) if c0 is None else as_var(c0)
    n_in = params.input_size

    def project(x):
        x = as_var(x)
        if input_mask is not None:
            x = x * input_mask
        if x.shape[-1] != n_in:
            raise DimensionError(f"input shape {x.shape} does not match input size {n_in}")
        return ag.matmul(x, params.weight[:n_in])

    shared = project(sequence[0]) if constant_input else None
    order = range(len(sequence) - 1, -1, -1) if reverse else range(len(sequence))
    states: list[Var | None] = [None] * len(sequence)
    for t in order:
        x_proj = shared if constant_input else project(sequence[t])
        h_in = h * recurrent_mask if recurrent_mask is not None else h
        h, c = lstm_cell_step(None, h_in, c, params, x_proj=x_proj)
        states[t] = h
    return states, (h, c)


def bilstm_forward(
    sequence: list,
    fwd: LstmCellParams,
    bwd: LstmCellParams,
    **kwargs,
) -> tuple[list[Var], tuple[Var, Var], tuple[Var, Var]]:
    """Bidirectional unroll. ``activations[i]`` is ``[forward_i, backward_i]``.

    Returns the activations plus the final (h, c) of each direction; the
    backward direction finishes at position 0.
    """
    if not sequence:
        raise EmptyInputError("empty input sequence")
    init_f = kwargs.pop("init_fwd", (None, None))
    init_b = kwargs.pop("init_bwd", (None, None))
    f_states, last_f = lstm_forward(sequence, fwd, *init_f, **kwargs)
    b_states, last_b = lstm_forward(sequence, bwd, *init_b, reverse=True, **kwargs)
    acts = [ag.concat([a, b], axis=-1) for a, b in zip(f_states, b_states)]
    return acts, last_f, last_b


def conv1d_forward(sequence, params: Conv1dParams) -> Var:
    """Strided cross-correlation of one sequence.

    ``sequence`` is (t,) or (t, in_channels); the result is (num_filters, o).
    """
    x = as_var(sequence)
    if x.value.ndim == 1:
        x = ag.reshape(x, (x.shape[0], 1))
    if x.shape[1] != params.in_channels:
        raise DimensionError(
            f"sequence channels {x.shape[1]} do not match filter channels {params.in_channels}"
        )
    conv_output_length(x.shape[0], params.kernel_size, params.stride)
    out = conv1d_batch(ag.reshape(x, (1,) + x.shape), params)
    return ag.transpose(out[0], (1, 0))


def conv1d_batch(x: Var, params: Conv1dParams) -> Var:
    """(batch, t, in_channels) -> (batch, o, num_filters)."""
    conv_output_length(x.shape[1], params.kernel_size, params.stride)
    return ag.im2col_conv1d(x, params.weight, params.bias, params.stride)


def softmax(logits, axis: int = -1) -> Var:
    logits = as_var(logits)
    if logits.value.size == 0:
        raise EmptyInputError("softmax of an empty tensor")
    return ag.softmax(logits, axis=axis)


def cross_entropy_loss(predicted_dist, target: int) -> Var:
    """``-ln p[target]`` with probabilities floored at 1e-12."""
    p = as_var(predicted_dist)
    if not 0 <= target < p.shape[-1]:
        raise TokenIndexError(f"target {target} outside distribution of size {p.shape[-1]}")
    picked = p[..., target]
    floored = ag.add(ag.relu(picked - PROB_FLOOR), PROB_FLOOR)
    return ag.neg(ag.log(floored))


def cross_entropy_from_logits(logits: Var, targets: np.ndarray) -> Var:
    """Mean over the batch of ``-log softmax(logits)[target]``."""
    targets = np.asarray(targets, dtype=np.int64)
    if np.any(targets < 0) or np.any(targets >= logits.shape[-1]):
        raise TokenIndexError(f"targets outside vocabulary of size {logits.shape[-1]}")
    logp = ag.log_softmax(logits, axis=-1)
    picked = logp[np.arange(len(targets)), targets]
    return ag.neg(ag.mean(picked))


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def dropout(x, rate: float, mode: str = "infer", rng: np.random.Generator | None = None) -> Var:
    """Inverted dropout; identity in ``infer`` mode."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "infer"):
        raise ParameterError(f"mode must be 'train' or 'infer', got {mode!r}")
    x = as_var(x)
    if mode == "infer" or rate == 0.0:
        return x
    if rng is None:
        raise ParameterError("train-mode dropout needs an rng")
    return x * dropout_mask(x.shape, rate, rng)


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def init_lstm(rng: np.random.Generator, input_size: int, hidden_size: int) -> dict[str, np.ndarray]:
    bound = 1.0 / np.sqrt(hidden_size)
    weight = rng.uniform(-bound, bound, size=(input_size + hidden_size, 4 * hidden_size))
    bias = np.zeros(4 * hidden_size)
    bias[hidden_size : 2 * hidden_size] = 1.0
    return {"weight": weight, "bias": bias}
