"""Token languages: problem descriptors in, tuning parameters out.

Each input field and each output parameter owns its own vocabulary, so token
ids are positional: id 0 of ``n`` and id 0 of ``c`` are unrelated. The decoder
feedback channel reserves id 0 for the GO symbol and shifts real tokens by one.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Iterable, Mapping

import numpy as np

from .constraints import KernelSpec
from .errors import (
    OutOfVocabularyError,
    SequenceLengthError,
    TokenIndexError,
    ValidationError,
    nearest_values,
)

INPUT_FIELDS = ("n", "c", "h", "w", "k", "y", "x")
PRECISIONS = ("fp32", "fp16")
GO = 0


@dataclass(frozen=True)
class ProblemDescriptor:
    n: int
    c: int
    h: int
    w: int
    k: int
    y: int
    x: int
    precision: str = "fp32"

    def __post_init__(self):
        for name in INPUT_FIELDS:
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ValidationError(f"descriptor field {name} must be an integer >= 1, got {value!r}", name, value)
        if self.precision not in PRECISIONS:
            raise ValidationError(f"precision must be one of {PRECISIONS}, got {self.precision!r}", "precision", self.precision)

    def as_tuple(self) -> tuple[int, ...]:
        return tuple(int(getattr(self, f)) for f in INPUT_FIELDS)

    def as_dict(self) -> dict[str, int]:
        return dict(zip(INPUT_FIELDS, self.as_tuple()))

    @classmethod
    def from_mapping(cls, values: Mapping[str, int], precision: str = "fp32") -> "ProblemDescriptor":
        missing = [f for f in INPUT_FIELDS if f not in values]
        if missing:
            raise ValidationError(f"descriptor is missing field(s) {', '.join(missing)}", missing[0])
        extra = [f for f in values if f not in INPUT_FIELDS]
        if extra:
            raise ValidationError(f"unknown descriptor field(s) {', '.join(extra)}", extra[0])
        return cls(**{f: int(values[f]) for f in INPUT_FIELDS}, precision=precision)


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[int, ...]
    role: str = "input"

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)


class Vocabulary:
    """Per-position value lists with value<->id maps."""

    def __init__(self, input_values: Mapping[str, Iterable[int]], output_values: Mapping[str, Iterable[int]]):
        self.input_values = {f: tuple(int(v) for v in input_values[f]) for f in INPUT_FIELDS}
        self.output_values = {p: tuple(int(v) for v in vals) for p, vals in output_values.items()}
        self._in_ids = {f: {v: i for i, v in enumerate(vals)} for f, vals in self.input_values.items()}
        self._out_ids = {p: {v: i for i, v in enumerate(vals)} for p, vals in self.output_values.items()}
        for f, vals in self.input_values.items():
            if not vals or len(self._in_ids[f]) != len(vals):
                raise ValidationError(f"input vocabulary for {f} is empty or repeats values", f)

    @property
    def input_sizes(self) -> tuple[int, ...]:
        return tuple(len(self.input_values[f]) for f in INPUT_FIELDS)

    @property
    def output_sizes(self) -> tuple[int, ...]:
        return tuple(len(v) for v in self.output_values.values())

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(self.output_values)

    def input_id(self, field: str, value: int, snap: bool = False) -> int:
        ids = self._in_ids[field]
        if value in ids:
            return ids[value]
        if snap:
            return ids[nearest_values(value, list(ids), 1)[0]]
        raise OutOfVocabularyError(field, value, list(ids))

    def output_id(self, param: str, value: int) -> int:
        try:
            return self._out_ids[param][value]
        except KeyError:
            if param not in self._out_ids:
                raise ValidationError(f"unknown output parameter '{param}'", param) from None
            raise ValidationError(
                f"value {value} is not legal for parameter '{param}'", param, value
            ) from None

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Vocabulary)
            and self.input_values == other.input_values
            and self.output_values == other.output_values
        )


def build_vocab(kernel_spec: KernelSpec, dataset) -> Vocabulary:
    """Input vocabularies come from the data, output vocabularies from the spec."""
    samples = list(getattr(dataset, "samples", dataset))
    if not samples:
        raise ValidationError("cannot build a vocabulary from an empty dataset")
    legal = {name: set(vals) for name, vals in kernel_spec.params}
    observed: dict[str, set[int]] = {f: set() for f in INPUT_FIELDS}
    for s in samples:
        for f, v in s.descriptor.as_dict().items():
            observed[f].add(v)
        for name, value in s.params.items():
            if name not in legal:
                raise ValidationError(f"parameter '{name}' is not part of kernel {kernel_spec.name}", name, value)
            if value not in legal[name]:
                raise ValidationError(
                    f"value {value} is not legal for {kernel_spec.name}.{name}", name, value
                )
    return Vocabulary(
        {f: sorted(vals) for f, vals in observed.items()},
        {name: vals for name, vals in kernel_spec.params},
    )


def encode_problem(d: ProblemDescriptor, v: Vocabulary, snap: bool = False) -> TokenSequence:
    return TokenSequence(tuple(v.input_id(f, getattr(d, f), snap) for f in INPUT_FIELDS), "input")


def decode_problem(t: TokenSequence, v: Vocabulary, precision: str = "fp32") -> ProblemDescriptor:
    if len(t) != len(INPUT_FIELDS):
        raise SequenceLengthError(f"expected {len(INPUT_FIELDS)} input tokens, got {len(t)}")
    values = {}
    for f, tok in zip(INPUT_FIELDS, t):
        vals = v.input_values[f]
        if not 0 <= tok < len(vals):
            raise TokenIndexError(f"token {tok} out of range for field {f} (size {len(vals)})")
        values[f] = vals[tok]
    return ProblemDescriptor.from_mapping(values, precision)


def encode_params(values: Mapping[str, int], spec: KernelSpec, v: Vocabulary) -> TokenSequence:
    if len(values) != len(spec):
        raise SequenceLengthError(f"{spec.name} has {len(spec)} parameters, got {len(values)}")
    return TokenSequence(tuple(v.output_id(n, values[n]) for n in spec.param_names), "output")


def decode_params(t, spec: KernelSpec, v: Vocabulary) -> dict[str, int]:
    tokens = tuple(t)
    if len(tokens) != len(spec):
        raise SequenceLengthError(f"{spec.name} has {len(spec)} parameters, got {len(tokens)} tokens")
    out = {}
    for name, tok in zip(spec.param_names, tokens):
        vals = v.output_values[name]
        if not 0 <= tok < len(vals):
            raise TokenIndexError(f"token {tok} out of range for {name} (size {len(vals)})")
        out[name] = vals[tok]
    return out


def one_hot(token: int, size: int) -> np.ndarray:
    if not 0 <= token < size:
        raise TokenIndexError(f"token {token} out of range for size {size}")
    vec = np.zeros(size)
    vec[token] = 1.0
    return vec


def one_hot_batch(tokens: np.ndarray, size: int) -> np.ndarray:
    """(..., ) int array -> (..., size) float array."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= size):
        raise TokenIndexError(f"token out of range for size {size}")
    return np.eye(size)[tokens]
