"""Greedy, beam and constraint-fused beam decoding.

Hypotheses are scored by the plain sum of natural-log step probabilities.
All outputs have the same fixed length so no length normalisation is done.
Score ties are broken in favour of the lexicographically smaller token
sequence, which keeps every search deterministic.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .constraints import ConstraintPredicate, KernelSpec
from .encoding import TokenSequence, Vocabulary
from .errors import ParameterError
from .models import SequenceModel


@dataclass(frozen=True)
class BeamHypothesis:
    tokens: tuple[int, ...]
    log_prob: float


class BeamResults(list):
    """Ranked hypotheses, best first. ``diagnostic`` explains an empty result."""

    diagnostic: str | None = None


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def greedy_decode(model: SequenceModel, tokens) -> np.ndarray | TokenSequence:
    """Argmax at every step, feeding the choice back where the variant does.

    A single (7,) input gives a :class:`TokenSequence`; a (batch, 7) array
    gives a (batch, positions) int array.
    """
    arr = np.asarray(tuple(tokens) if isinstance(tokens, TokenSequence) else tokens, dtype=np.int64)
    single = arr.ndim == 1
    ctx = model.context()
    state = model.encode(arr, ctx)
    out = []
    prev = None
    for pos in range(model.num_positions):
        logits, state = model.step(state, pos, prev, ctx)
        prev = _log_softmax(logits.value).argmax(axis=-1)
        out.append(prev)
    result = np.stack(out, axis=1)
    if single:
        return TokenSequence(tuple(int(t) for t in result[0]), "output")
    return result


def _search(model: SequenceModel, tokens, k: int, accept=None, state=None):
    if k < 1:
        raise ParameterError(f"beam width must be >= 1, got {k}")
    ctx = model.context()
    if state is None:
        state = model.encode(np.asarray(tuple(tokens), dtype=np.int64), ctx)
    prefixes = np.zeros((1, 0), dtype=np.int64)
    scores = np.zeros(1)
    rejected: Counter = Counter()
    for pos in range(model.num_positions):
        prev = prefixes[:, -1] if pos else None
        logits, state = model.step(state, pos, prev, ctx)
        logp = _log_softmax(logits.value)
        n_beams, vocab = logp.shape
        cand = (scores[:, None] + logp).ravel()
        parent = np.repeat(np.arange(n_beams), vocab)
        tok = np.tile(np.arange(vocab), n_beams)
        keys = [tok] + [prefixes[parent, j] for j in range(pos - 1, -1, -1)] + [-cand]
        order = np.lexsort(keys)
        if accept is None:
            chosen = order[:k]
        else:
            chosen = []
            last = pos == model.num_positions - 1
            for c in order:
                seq = tuple(prefixes[parent[c]]) + (int(tok[c]),)
                failed = accept(seq, last)
                if failed is None:
                    chosen.append(c)
                    if len(chosen) == k:
                        break
                else:
                    rejected[failed] += 1
            if not chosen:
                out = BeamResults()
                name = rejected.most_common(1)[0][0] if rejected else "unknown"
                out.diagnostic = f"every candidate rejected at position {pos}; most rejections by '{name}'"
                return out
            chosen = np.asarray(chosen, dtype=np.int64)
        rows = parent[chosen]
        prefixes = np.concatenate([prefixes[rows], tok[chosen][:, None]], axis=1)
        scores = cand[chosen]
        if pos + 1 < model.num_positions:
            state = model.select(state, rows)
    out = BeamResults(BeamHypothesis(tuple(int(t) for t in p), float(s)) for p, s in zip(prefixes, scores))
    return out


def beam_search(model: SequenceModel, tokens, k: int, state=None) -> BeamResults:
    """Top-``k`` output sequences by accumulated log-probability, best first.

    ``state`` may carry a precomputed single-row encoder state.
    """
    return _search(model, tokens, k, state=state)


def constrained_beam_search(
    model: SequenceModel,
    tokens,
    k: int,
    predicates: Sequence[ConstraintPredicate],
    spec: KernelSpec,
    vocab: Vocabulary,
    descriptor,
    state=None,
) -> BeamResults:
    """Beam search that drops a candidate the moment a predicate rejects its prefix.

    Predicates see decoded parameter values, not token ids. ``final_only``
    predicates are consulted on complete sequences only.
    """
    names = spec.param_names
    values = [vocab.output_values[n] for n in names]
    preds = list(predicates)

    def accept(seq, last):
        partial = {names[i]: values[i][t] for i, t in enumerate(seq)}
        for p in preds:
            if p.final_only and not last:
                continue
            if not p(descriptor, partial):
                return p.name
        return None

    return _search(model, tokens, k, accept=accept, state=state)

