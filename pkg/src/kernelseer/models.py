"""Sequence models mapping descriptor tokens to tuning-parameter tokens.

Variants:

``enc-dec``   LSTM encoder; its final state seeds an LSTM decoder that is fed
              the previous output token (GO first).
``attn``      bi-LSTM encoder, additive attention, post-attention LSTM fed the
              context vector and the previous output token.
``attn-2``    as ``attn`` but the post-attention LSTM sees only the context
              vector; no output feedback.
``hybrid``    Conv1D encoder, flattened, then two stacked bi-LSTMs over the
              output positions.
``hybrid-2``  Conv1D encoder; the second bi-LSTM receives only the final
              forward/backward states of the first.

All variants decode a fixed number of positions (one per kernel parameter)
with a separate dense+softmax head per position.

Every model exposes the same step interface, used by training, greedy and
beam search alike::

    state = model.encode(tokens)            # tokens: (batch, 7) int
    logits, state = model.step(state, i, prev_tokens)
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Any

import numpy as np

from .encoding import one_hot_batch
from .errors import DimensionError, EmptyInputError, InputTooShortError, ParameterError
from .nn import autograd as ag
from .nn.autograd import Var, as_var
from .nn.layers import (
    Conv1dParams,
    LstmCellParams,
    bilstm_forward,
    conv1d_batch,
    conv_output_length,
    dense_forward,
    dropout_mask,
    init_lstm,
    lstm_cell_step,
    lstm_forward,
    xavier_uniform,
)

VARIANTS = ("enc-dec", "attn", "attn-2", "hybrid", "hybrid-2")


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "hybrid-2"
    encoder_size: int = 256
    pre_attention_size: int = 256
    post_attention_size: int = 512
    attention_dense: int = 2
    conv_layers: tuple[tuple[int, int, int], ...] = ((64, 3, 1), (32, 3, 1))
    decoder_size: int = 256
    dropout: float = 0.2
    recurrent_dropout: float = 0.2

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ParameterError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        for name in ("encoder_size", "pre_attention_size", "post_attention_size", "attention_dense", "decoder_size"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1")
        if not self.conv_layers:
            raise ParameterError("at least one conv layer is required")
        object.__setattr__(self, "conv_layers", tuple(tuple(int(v) for v in layer) for layer in self.conv_layers))
        for f, k, s in self.conv_layers:
            if f < 1 or k < 1 or s < 1:
                raise ParameterError(f"conv layer (f={f}, k={k}, s={s}) needs positive sizes")
        for name in ("dropout", "recurrent_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ParameterError(f"{name} must be in [0, 1)")

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class ModelParams:
    config: ModelConfig
    input_sizes: tuple[int, ...]
    output_sizes: tuple[int, ...]
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    # provenance carried through checkpoints
    kernel: str | None = None
    precision: str | None = None
    vocab: Any = None

    def copy(self) -> "ModelParams":
        return replace(self, tensors={k: v.copy() for k, v in self.tensors.items()})

    def num_weights(self) -> int:
        return sum(v.size for v in self.tensors.values())


@dataclass
class RunContext:
    """Weights wrapped as Vars plus dropout mode for one forward pass."""

    weights: dict[str, Var]
    train: bool = False
    rng: np.random.Generator | None = None

    def mask(self, shape, rate: float):
        if not self.train or rate == 0.0:
            return None
        return dropout_mask(shape, rate, self.rng)


def feedback_size(output_sizes) -> int:
    return 1 + max(output_sizes)


def feedback_tokens(position: int, prev_tokens, batch: int) -> np.ndarray:
    """GO (0) at the first position, otherwise previous token shifted by one."""
    if position == 0 or prev_tokens is None:
        return np.zeros(batch, dtype=np.int64)
    return np.asarray(prev_tokens, dtype=np.int64) + 1


def _lstm(w: dict[str, Var], prefix: str) -> LstmCellParams:
    return LstmCellParams(w[f"{prefix}.weight"], w[f"{prefix}.bias"])


def hybrid_feature_size(config: ModelConfig, input_sizes) -> int:
    t = len(input_sizes)
    f = max(input_sizes)
    for f, k, s in config.conv_layers:
        t = conv_output_length(t, k, s)
    return f * t


def init_params(config: ModelConfig, input_sizes, output_sizes, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    input_sizes, output_sizes = tuple(input_sizes), tuple(output_sizes)
    v_in = max(input_sizes)
    v_fb = feedback_size(output_sizes)
    t: dict[str, np.ndarray] = {}

    def lstm(prefix, n_in, hidden):
        for k, v in init_lstm(rng, n_in, hidden).items():
            t[f"{prefix}.{k}"] = v

    def heads(n_in):
        for i, size in enumerate(output_sizes):
            t[f"head{i}.weight"] = xavier_uniform(rng, n_in, size)
            t[f"head{i}.bias"] = np.zeros(size)

    v = config.variant
    if v == "enc-dec":
        e = config.encoder_size
        lstm("enc", v_in, e)
        lstm("dec", v_fb, e)
        heads(e)
    elif v in ("attn", "attn-2"):
        na, ns, nd = config.pre_attention_size, config.post_attention_size, config.attention_dense
        lstm("pre_f", v_in, na)
        lstm("pre_b", v_in, na)
        t["att.ws"] = xavier_uniform(rng, ns + 2 * na, nd, (ns, nd))
        t["att.wa"] = xavier_uniform(rng, ns + 2 * na, nd, (2 * na, nd))
        t["att.b"] = np.zeros(nd)
        t["att.v"] = xavier_uniform(rng, nd, 1)
        t["att.vb"] = np.zeros(1)
        lstm("post", 2 * na + (v_fb if v == "attn" else 0), ns)
        heads(ns)
    else:
        length = len(input_sizes)
        if length < config.conv_layers[0][1]:
            raise InputTooShortError(f"input length {length} shorter than first conv kernel")
        c_in = v_in
        for j, (f, k, s) in enumerate(config.conv_layers):
            length = conv_output_length(length, k, s)
            t[f"conv{j}.weight"] = xavier_uniform(rng, k * c_in, f)
            t[f"conv{j}.bias"] = np.zeros(f)
            c_in = f
        h = config.decoder_size
        flat = hybrid_feature_size(config, input_sizes)
        lstm("dec1_f", flat, h)
        lstm("dec1_b", flat, h)
        lstm("dec2_f", 2 * h, h)
        lstm("dec2_b", 2 * h, h)
        heads(2 * h)
    return ModelParams(config, input_sizes, output_sizes, t)


# ---------------------------------------------------------------------------
# attention pieces


@dataclass
class AttentionParams:
    """Scores ``tanh(s @ ws + a @ wa + b) @ v + vb`` for every input step."""

    ws: Var
    wa: Var
    b: Var
    v: Var
    vb: Var


def _attention_from(w: dict[str, Var]) -> AttentionParams:
    return AttentionParams(w["att.ws"], w["att.wa"], w["att.b"], w["att.v"], w["att.vb"])


def attention_scores(s_prev: Var, a_proj: Var, att: AttentionParams) -> Var:
    """``s_prev`` (batch, n_s), ``a_proj`` (batch, t, n_d) -> energies (batch, t)."""
    s_proj = ag.matmul(s_prev, att.ws)
    hidden = ag.tanh(ag.reshape(s_proj, (s_proj.shape[0], 1, s_proj.shape[1])) + a_proj + att.b)
    energies = ag.matmul(hidden, att.v) + att.vb
    return ag.reshape(energies, energies.shape[:2])


def attention_weights(s_prev, activations, att: AttentionParams) -> Var:
    """Softmax over input steps of the attention scores.

    ``s_prev`` is (n_s,) or (batch, n_s); ``activations`` is a list of per-step
    (…, 2*n_a) tensors or a stacked (batch, t, 2*n_a) array.
    """
    s_prev = as_var(s_prev)
    single = s_prev.value.ndim == 1
    if isinstance(activations, (list, tuple)):
        if not activations:
            raise EmptyInputError("attention over an empty activation list")
        acts = ag.stack([as_var(a) for a in activations], axis=-2)
    else:
        acts = as_var(activations)
    if single:
        s_prev = ag.reshape(s_prev, (1,) + s_prev.shape)
        if acts.value.ndim == 2:
            acts = ag.reshape(acts, (1,) + acts.shape)
    if s_prev.shape[-1] != att.ws.shape[0] or acts.shape[-1] != att.wa.shape[0]:
        raise DimensionError(
            f"state {s_prev.shape} / activations {acts.shape} do not fit attention weights "
            f"{att.ws.shape} / {att.wa.shape}"
        )
    alpha = ag.softmax(attention_scores(s_prev, ag.matmul(acts, att.wa), att), axis=-1)
    return alpha[0] if single else alpha


def context_vector(alpha, activations) -> Var:
    """Attention-weighted sum of activations: sum_t alpha[t] * a[t]."""
    alpha = as_var(alpha)
    if isinstance(activations, (list, tuple)):
        acts = ag.stack([as_var(a) for a in activations], axis=-2)
    else:
        acts = as_var(activations)
    if alpha.shape[-1] != acts.shape[-2]:
        raise DimensionError(f"{alpha.shape[-1]} attention weights for {acts.shape[-2]} activations")
    weighted = ag.reshape(alpha, alpha.shape + (1,)) * acts
    return ag.total(weighted, axis=-2)


# ---------------------------------------------------------------------------
# models


class SequenceModel:
    """Base class: subclasses implement ``encode`` and ``step``."""

    feeds_back = False

    def __init__(self, params: ModelParams):
        self.params = params
        self.config = params.config
        self.input_sizes = params.input_sizes
        self.output_sizes = params.output_sizes
        self._infer_weights: dict[str, Var] | None = None

    @property
    def num_positions(self) -> int:
        return len(self.output_sizes)

    def context(self, train: bool = False, rng=None, requires_grad: bool = False) -> RunContext:
        if requires_grad:
            weights = {k: Var(v, requires_grad=True) for k, v in self.params.tensors.items()}
        else:
            if self._infer_weights is None or set(self._infer_weights) != set(self.params.tensors):
                self._infer_weights = {k: Var(v) for k, v in self.params.tensors.items()}
            weights = self._infer_weights
        return RunContext(weights, train=train, rng=rng)

    def check_tokens(self, tokens) -> np.ndarray:
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim == 1:
            tokens = tokens[None, :]
        if tokens.shape[1] != len(self.input_sizes):
            raise DimensionError(f"expected {len(self.input_sizes)} input tokens, got {tokens.shape[1]}")
        if np.any(tokens < 0) or np.any(tokens >= np.asarray(self.input_sizes)):
            raise DimensionError("input token outside its field vocabulary")
        return tokens

    def input_onehots(self, tokens: np.ndarray) -> np.ndarray:
        return one_hot_batch(tokens, max(self.input_sizes))

    def head(self, ctx: RunContext, position: int, features: Var) -> Var:
        w = ctx.weights
        return dense_forward(features, w[f"head{position}.weight"], w[f"head{position}.bias"])

    def encode(self, tokens, ctx: RunContext | None = None) -> dict:
        raise NotImplementedError

    def step(self, state: dict, position: int, prev_tokens, ctx: RunContext | None = None) -> tuple[Var, dict]:
        raise NotImplementedError

    def forward_logits(self, tokens, teacher=None, ctx: RunContext | None = None) -> list[Var]:
        """Logits per output position. With ``teacher`` the feedback is the
        ground truth; without it the argmax of the previous step."""
        ctx = ctx or self.context()
        state = self.encode(tokens, ctx)
        outs = []
        prev = None
        for i in range(self.num_positions):
            logits, state = self.step(state, i, prev, ctx)
            outs.append(logits)
            if teacher is not None:
                prev = np.asarray(teacher, dtype=np.int64).reshape(-1, self.num_positions)[:, i]
            else:
                prev = logits.value.argmax(axis=-1)
        return outs

    def forward(self, tokens, teacher=None, ctx: RunContext | None = None) -> list[np.ndarray]:
        """Per-position probability distributions (batch, vocab_i)."""
        return [ag.softmax(l, axis=-1).value for l in self.forward_logits(tokens, teacher, ctx)]

    @staticmethod
    def select(state: dict, rows) -> dict:
        """Reorder/duplicate batch rows of an inference state."""
        rows = np.asarray(rows, dtype=np.int64)
        out = {}
        for key, val in state.items():
            if isinstance(val, Var):
                out[key] = Var(val.value[rows])
            elif isinstance(val, np.ndarray):
                out[key] = val[rows]
            elif isinstance(val, list):
                out[key] = [Var(v.value[rows]) if isinstance(v, Var) else v[rows] for v in val]
            else:
                out[key] = val
        return out


class EncoderDecoder(SequenceModel):
    feeds_back = True

    def encode(self, tokens, ctx=None):
        ctx = ctx or self.context()
        tokens = self.check_tokens(tokens)
        x = self.input_onehots(tokens)
        _, (h, c) = lstm_forward([x[:, t] for t in range(x.shape[1])], _lstm(ctx.weights, "enc"))
        batch = tokens.shape[0]
        e = self.config.encoder_size
        return {
            "h": h,
            "c": c,
            "in_mask": ctx.mask((batch, feedback_size(self.output_sizes)), self.config.dropout),
            "rec_mask": ctx.mask((batch, e), self.config.recurrent_dropout),
        }

    def step(self, state, position, prev_tokens, ctx=None):
        ctx = ctx or self.context()
        batch = state["h"].shape[0]
        x = as_var(one_hot_batch(feedback_tokens(position, prev_tokens, batch), feedback_size(self.output_sizes)))
        if state["in_mask"] is not None:
            x = x * state["in_mask"]
        h_in = state["h"] * state["rec_mask"] if state["rec_mask"] is not None else state["h"]
        h, c = lstm_cell_step(x, h_in, state["c"], _lstm(ctx.weights, "dec"))
        return self.head(ctx, position, h), {**state, "h": h, "c": c}


class Attention(SequenceModel):
    """Additive attention. ``feeds_back`` False gives the modified ``attn-2``."""

    feeds_back = True

    def encode(self, tokens, ctx=None):
        ctx = ctx or self.context()
        tokens = self.check_tokens(tokens)
        x = self.input_onehots(tokens)
        w = ctx.weights
        acts, _, _ = bilstm_forward([x[:, t] for t in range(x.shape[1])], _lstm(w, "pre_f"), _lstm(w, "pre_b"))
        a = ag.stack(acts, axis=1)
        batch = tokens.shape[0]
        ns = self.config.post_attention_size
        n_in = _lstm(w, "post").input_size
        return {
            "a": a,
            "a_proj": ag.matmul(a, w["att.wa"]),
            "s": Var(np.zeros((batch, ns))),
            "cs": Var(np.zeros((batch, ns))),
            "in_mask": ctx.mask((batch, n_in), self.config.dropout),
            "rec_mask": ctx.mask((batch, ns), self.config.recurrent_dropout),
        }

    def attend(self, state, ctx) -> tuple[Var, Var]:
        att = _attention_from(ctx.weights)
        alpha = ag.softmax(attention_scores(state["s"], state["a_proj"], att), axis=-1)
        return alpha, context_vector(alpha, state["a"])

    def step(self, state, position, prev_tokens, ctx=None):
        ctx = ctx or self.context()
        _, ctx_vec = self.attend(state, ctx)
        if self.feeds_back:
            batch = ctx_vec.shape[0]
            fb = one_hot_batch(feedback_tokens(position, prev_tokens, batch), feedback_size(self.output_sizes))
            x = ag.concat([ctx_vec, fb], axis=-1)
        else:
            x = ctx_vec
        if state["in_mask"] is not None:
            x = x * state["in_mask"]
        s_in = state["s"] * state["rec_mask"] if state["rec_mask"] is not None else state["s"]
        s, cs = lstm_cell_step(x, s_in, state["cs"], _lstm(ctx.weights, "post"))
        return self.head(ctx, position, s), {**state, "s": s, "cs": cs}


class ModifiedAttention(Attention):
    feeds_back = False


class Hybrid(SequenceModel):
    """Conv1D encoder with a bi-LSTM decoder; all positions computed at encode time."""

    layered = False

    def encode_features(self, tokens, ctx) -> Var:
        tokens = self.check_tokens(tokens)
        x = as_var(self.input_onehots(tokens))
        for j, (f, k, s) in enumerate(self.config.conv_layers):
            conv = Conv1dParams(ctx.weights[f"conv{j}.weight"], ctx.weights[f"conv{j}.bias"], k, s)
            x = ag.relu(conv1d_batch(x, conv))
        # (batch, o, f) -> (batch, f, o) so the flattening is filter-major
        x = ag.transpose(x, (0, 2, 1))
        return ag.reshape(x, (x.shape[0], -1))

    def decode_features(self, encoded: Var, ctx) -> list[Var]:
        w = ctx.weights
        cfg = self.config
        batch = encoded.shape[0]
        steps = self.num_positions
        h = cfg.decoder_size

        def masks(n_in):
            return {
                "input_mask": ctx.mask((batch, n_in), cfg.dropout),
                "recurrent_mask": ctx.mask((batch, h), cfg.recurrent_dropout),
            }

        def run(seq, prefix, constant, init_f=(None, None), init_b=(None, None)):
            n_in = seq[0].shape[-1]
            f_states, last_f = lstm_forward(seq, _lstm(w, f"{prefix}_f"), *init_f, constant_input=constant, **masks(n_in))
            b_states, last_b = lstm_forward(
                seq, _lstm(w, f"{prefix}_b"), *init_b, reverse=True, constant_input=constant, **masks(n_in)
            )
            acts = [ag.concat([a, b], axis=-1) for a, b in zip(f_states, b_states)]
            return acts, last_f, last_b

        acts1, last_f, last_b = run([encoded] * steps, "dec1", True)
        if self.layered:
            summary = ag.concat([last_f[0], last_b[0]], axis=-1)
            acts2, _, _ = run([summary] * steps, "dec2", True, init_f=last_f, init_b=last_b)
        else:
            acts2, _, _ = run(acts1, "dec2", False)
        return acts2

    def encode(self, tokens, ctx=None):
        ctx = ctx or self.context()
        feats = self.decode_features(self.encode_features(tokens, ctx), ctx)
        return {"logits": [self.head(ctx, i, f) for i, f in enumerate(feats)]}

    def step(self, state, position, prev_tokens, ctx=None):
        return state["logits"][position], state


class HybridLayered(Hybrid):
    layered = True


_CLASSES = {
    "enc-dec": EncoderDecoder,
    "attn": Attention,
    "attn-2": ModifiedAttention,
    "hybrid": Hybrid,
    "hybrid-2": HybridLayered,
}


def build_model(params: ModelParams) -> SequenceModel:
    return _CLASSES[params.config.variant](params)


# functional entry points --------------------------------------------------


def encdec_forward(model: SequenceModel, tokens, teacher_tokens=None) -> list[np.ndarray]:
    """Distributions for each output position; ``teacher_tokens`` switches on teacher forcing."""
    return model.forward(tokens, teacher_tokens)


def attn2_forward(model: ModifiedAttention, tokens) -> list[np.ndarray]:
    return model.forward(tokens)


def hybrid_encode(model: Hybrid, tokens) -> np.ndarray:
    return model.encode_features(tokens, model.context()).value


def hybrid2_decode(model: HybridLayered, encoded) -> list[np.ndarray]:
    ctx = model.context()
    feats = model.decode_features(as_var(encoded), ctx)
    return [ag.softmax(model.head(ctx, i, f), axis=-1).value for i, f in enumerate(feats)]
