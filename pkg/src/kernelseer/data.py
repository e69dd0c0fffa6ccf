"""Datasets: the perf-record text format, synthetic generation, splitting,
and the checkpoint file format.

Record grammar, one sample per line (``#`` starts a comment line)::

    <kernel>,<fp32|fp16>|n=INT,c=INT,h=INT,w=INT,k=INT,y=INT,x=INT|<name>=<value>{,<name>=<value>}

Checkpoint layout: UTF-8 ``key: value`` header lines, one blank line, then
every tensor as little-endian float32 in header order.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .constraints import KernelSpec, get_spec, parse_spec_line, validate_sequence
from .encoding import INPUT_FIELDS, PRECISIONS, ProblemDescriptor, Vocabulary, encode_params, encode_problem
from .errors import (
    ParameterError,
    ParseError,
    PayloadLengthError,
    ShapeMismatchError,
    ValidationError,
    VersionMismatchError,
    CheckpointError,
)
from .models import ModelConfig, ModelParams


@dataclass(frozen=True)
class Sample:
    descriptor: ProblemDescriptor
    params: Mapping[str, int]
    kernel: str
    precision: str

    def __post_init__(self):
        object.__setattr__(self, "params", dict(self.params))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Sample)
            and self.descriptor == other.descriptor
            and dict(self.params) == dict(other.params)
            and list(self.params) == list(other.params)
            and self.kernel == other.kernel
            and self.precision == other.precision
        )

    def __hash__(self):
        return hash((self.descriptor, tuple(self.params.items()), self.kernel, self.precision))


@dataclass
class Dataset:
    kernel: str
    precision: str
    samples: list[Sample] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for s in self.samples:
            if s.kernel != self.kernel or s.precision != self.precision:
                raise ValidationError(
                    f"sample for {s.kernel}/{s.precision} in a {self.kernel}/{self.precision} dataset"
                )
            if s.descriptor in seen:
                raise ValidationError(f"duplicate descriptor {s.descriptor.as_dict()}")
            seen.add(s.descriptor)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def encode(self, spec: KernelSpec, vocab: Vocabulary, snap: bool = False) -> tuple[np.ndarray, np.ndarray]:
        x = np.array([encode_problem(s.descriptor, vocab, snap).tokens for s in self.samples], dtype=np.int64)
        y = np.array([encode_params(s.params, spec, vocab).tokens for s in self.samples], dtype=np.int64)
        return x.reshape(len(self.samples), len(INPUT_FIELDS)), y.reshape(len(self.samples), len(spec))


# ---------------------------------------------------------------------------
# record format

_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_INT = re.compile(r"-?\d+")


def _split_with_cols(text: str, sep: str, start: int) -> list[tuple[str, int]]:
    """Split ``text`` on ``sep`` keeping the 1-based column of each piece."""
    out = []
    col = start
    for piece in text.split(sep):
        lead = len(piece) - len(piece.lstrip())
        out.append((piece.strip(), col + lead))
        col += len(piece) + 1
    return out


def _key_values(text: str, start: int, line: int, what: str) -> list[tuple[str, int, int]]:
    items = []
    for piece, col in _split_with_cols(text, ",", start):
        if "=" not in piece:
            raise ParseError(f"expected '<name>=<int>' in {what}, got '{piece}'", line, col)
        key, val = (p.strip() for p in piece.split("=", 1))
        if not _NAME.fullmatch(key):
            raise ParseError(f"bad name '{key}' in {what}", line, col)
        if not _INT.fullmatch(val):
            raise ParseError(f"value for '{key}' is not an integer: '{val}'", line, col + piece.index("=") + 1)
        items.append((key, int(val), col))
    return items


def parse_record(line: str, registry: Mapping[str, KernelSpec] | None = None, lineno: int = 1) -> Sample | None:
    """Parse one record; comment and blank lines give ``None``."""
    text = line.rstrip("\r\n")
    if not text.strip() or text.lstrip().startswith("#"):
        return None
    sections = _split_with_cols(text, "|", 1)
    if len(sections) != 3:
        raise ParseError(f"expected 3 '|'-separated sections, found {len(sections)}", lineno, 1)
    (head, head_col), (desc_text, desc_col), (param_text, param_col) = sections

    head_parts = _split_with_cols(head, ",", head_col)
    if len(head_parts) != 2:
        raise ParseError("header must be '<kernel>,<fp32|fp16>'", lineno, head_col)
    (kernel, k_col), (precision, p_col) = head_parts
    if not _NAME.fullmatch(kernel):
        raise ParseError(f"bad kernel name '{kernel}'", lineno, k_col)
    if precision not in PRECISIONS:
        raise ParseError(f"precision must be fp32 or fp16, got '{precision}'", lineno, p_col)

    desc_items = _key_values(desc_text, desc_col, lineno, "descriptor")
    keys = tuple(k for k, _, _ in desc_items)
    if keys != INPUT_FIELDS:
        raise ParseError(f"descriptor fields must be {','.join(INPUT_FIELDS)} in order, got {','.join(keys)}", lineno, desc_col)
    for key, val, col in desc_items:
        if val < 1:
            raise ValidationError(f"line {lineno}, column {col}: descriptor field {key} must be >= 1", key, val)
    descriptor = ProblemDescriptor(**{k: v for k, v, _ in desc_items}, precision=precision)

    spec = get_spec(kernel, registry)
    param_items = _key_values(param_text, param_col, lineno, "parameters")
    values: dict[str, int] = {}
    for key, val, col in param_items:
        if key in values:
            raise ParseError(f"parameter '{key}' given twice", lineno, col)
        if key not in spec.param_names:
            raise ValidationError(f"line {lineno}, column {col}: kernel {kernel} has no parameter '{key}'", key, val)
        if val not in spec.values(key):
            raise ValidationError(
                f"line {lineno}, column {col}: value {val} is not legal for {kernel}.{key}", key, val
            )
        values[key] = val
    missing = [n for n in spec.param_names if n not in values]
    if missing:
        raise ValidationError(f"line {lineno}: missing parameter(s) {', '.join(missing)}", missing[0])
    ordered = {n: values[n] for n in spec.param_names}
    return Sample(descriptor, ordered, kernel, precision)


def format_record(sample: Sample) -> str:
    desc = ",".join(f"{f}={v}" for f, v in sample.descriptor.as_dict().items())
    params = ",".join(f"{k}={v}" for k, v in sample.params.items())
    return f"{sample.kernel},{sample.precision}|{desc}|{params}"


def read_records(path, registry: Mapping[str, KernelSpec] | None = None) -> tuple[list[Sample], dict[str, KernelSpec]]:
    """Read every record in ``path``. ``@spec`` lines extend the kernel registry."""
    from .constraints import builtin_specs

    registry = dict(builtin_specs() if registry is None else registry)
    samples = []
    with open(path, encoding="utf-8") as fh:
        lines = fh.readlines()
    for lineno, raw in enumerate(lines, start=1):
        if raw.strip().startswith("@spec"):
            spec = parse_spec_line(raw, lineno)
            registry[spec.name] = spec
    for lineno, raw in enumerate(lines, start=1):
        if raw.strip().startswith("@spec"):
            continue
        sample = parse_record(raw, registry, lineno)
        if sample is not None:
            samples.append(sample)
    return samples, registry


def load_dataset(path, kernel: str | None = None, precision: str | None = None, registry=None) -> tuple[Dataset, KernelSpec]:
    samples, registry = read_records(path, registry)
    if kernel is not None:
        samples = [s for s in samples if s.kernel == kernel]
    if precision is not None:
        samples = [s for s in samples if s.precision == precision]
    if not samples:
        raise ValidationError(f"no records for kernel={kernel} precision={precision} in {path}")
    kernels = {s.kernel for s in samples}
    precisions = {s.precision for s in samples}
    if len(kernels) > 1 or len(precisions) > 1:
        raise ValidationError(
            f"{path} mixes kernels {sorted(kernels)} / precisions {sorted(precisions)}; pass --kernel and --precision"
        )
    ds = Dataset(samples[0].kernel, samples[0].precision, samples)
    return ds, registry[ds.kernel]


def write_dataset(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in dataset.samples:
            fh.write(format_record(s) + "\n")


# ---------------------------------------------------------------------------
# synthetic data

N_GRID = (1, 2, 4, 8, 16, 32, 64, 128, 256)
CK_GRID = (16, 32, 64, 128, 256, 512, 1024)
HW_GRID = (7, 14, 28, 56, 112, 224)
DIFFICULTIES = ("easy", "moderate")


def _filter_size(kernel: str) -> int:
    return 3 if "3x3" in kernel else 1


def _bucket(value: float, lo: float, hi: float, levels: int) -> int:
    if levels <= 1 or hi <= lo:
        return 0
    width = (hi - lo) / levels
    return min(levels - 1, max(0, int(math.floor((value - lo) / width))))


def _features(d: ProblemDescriptor) -> dict[str, float]:
    ln, lc, lk = math.log2(d.n), math.log2(d.c), math.log2(d.k)
    lh, lw = math.log2(d.h), math.log2(d.w)
    return {
        "volume": ln + lc + lh + lw,
        "weights": lc + lk,
        "ratio": lc - lk,
        "pixels": ln + lh + lw,
        "output": ln + lk + lh + lw,
        "spatial": lh + lw,
    }


_LOG_RANGES = {
    "volume": (9.0, 34.0), "weights": (8.0, 21.0), "ratio": (-6.5, 7.5),
    "pixels": (5.0, 25.0), "output": (9.0, 34.0), "spatial": (5.0, 17.0),
}
_EASY_FIELDS = ("c", "k", "h", "w", "n")
# upper power-of-two cut points per field; each easy parameter reads one field
_EASY_CUTS = {
    "n": (128, 256),
    "c": (512, 1024),
    "k": (512, 1024),
    "h": (112, 224),
    "w": (112, 224),
}
_MODERATE_FEATURES = ("volume", "weights", "ratio", "pixels", "output", "spatial")


def synthetic_params(spec: KernelSpec, d: ProblemDescriptor, difficulty: str) -> dict[str, int]:
    """The hidden function: deterministic, bucketed at power-of-two boundaries."""
    feats = _features(d)
    idx: list[int] = []
    for p, (name, values) in enumerate(spec.params):
        m = len(values)
        if difficulty == "easy":
            f = _EASY_FIELDS[p % len(_EASY_FIELDS)]
            cuts = _EASY_CUTS[f][-(min(m, 3) - 1) :] if m > 1 else ()
            i = sum(getattr(d, f) >= cut for cut in cuts)
        else:
            f = _MODERATE_FEATURES[p % len(_MODERATE_FEATURES)]
            lo, hi = _LOG_RANGES[f]
            i = _bucket(feats[f], lo, hi, min(m, 5))
            if p > 0 and idx[-1] >= 2:
                i = max(0, i - 1) if p % 2 else min(m - 1, i + 1)
        idx.append(i)
    values = {name: vals[i] for (name, vals), i in zip(spec.params, idx)}
    return _repair(spec, d, values)


def _repair(spec: KernelSpec, d: ProblemDescriptor, values: dict[str, int]) -> dict[str, int]:
    """Step the last offending parameter down until every predicate passes."""
    for _ in range(sum(spec.sizes)):
        bad = validate_sequence(spec, d, values)
        if bad is None:
            return values
        for name in reversed(bad.params):
            vals = spec.values(name)
            i = vals.index(values[name])
            if i > 0:
                values[name] = vals[i - 1]
                break
        else:
            break
    raise ValidationError(f"cannot bring synthetic parameters for {spec.name} inside its constraints")


def generate_synthetic(
    spec: KernelSpec, n: int, seed: int, difficulty: str = "moderate", precision: str = "fp32"
) -> Dataset:
    if n < 1:
        raise ParameterError("sample count must be >= 1")
    if difficulty not in DIFFICULTIES:
        raise ParameterError(f"difficulty must be one of {DIFFICULTIES}")
    fs = _filter_size(spec.name)
    capacity = len(N_GRID) * len(CK_GRID) ** 2 * len(HW_GRID) ** 2
    if n > capacity:
        raise ParameterError(f"at most {capacity} distinct synthetic descriptors exist, asked for {n}")
    rng = np.random.default_rng(seed)
    seen: set[tuple] = set()
    samples = []
    while len(samples) < n:
        pick = (
            N_GRID[rng.integers(len(N_GRID))],
            CK_GRID[rng.integers(len(CK_GRID))],
            HW_GRID[rng.integers(len(HW_GRID))],
            HW_GRID[rng.integers(len(HW_GRID))],
            CK_GRID[rng.integers(len(CK_GRID))],
        )
        if pick in seen:
            continue
        seen.add(pick)
        n_, c, h, w, k = (int(v) for v in pick)
        d = ProblemDescriptor(n_, c, h, w, k, fs, fs, precision)
        samples.append(Sample(d, synthetic_params(spec, d, difficulty), spec.name, precision))
    return Dataset(spec.name, precision, samples)


def split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0.0 < test_fraction < 1.0:
        raise ParameterError(f"test fraction must be in (0, 1), got {test_fraction}")
    order = np.random.default_rng(seed).permutation(len(dataset))
    n_test = int(round(len(dataset) * test_fraction))
    test_idx, train_idx = order[:n_test], order[n_test:]
    pick = lambda idx: Dataset(dataset.kernel, dataset.precision, [dataset.samples[i] for i in idx])
    return pick(train_idx), pick(test_idx)


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


def _shape_text(shape) -> str:
    return "x".join(str(s) for s in shape) if shape else "scalar"


def _parse_shape(text: str) -> tuple[int, ...]:
    if text == "scalar":
        return ()
    return tuple(int(s) for s in text.split("x"))


def save_checkpoint(params: ModelParams, path) -> None:
    cfg = params.config
    lines = [f"format_version: {CHECKPOINT_VERSION}", f"variant: {cfg.variant}"]
    for key, val in cfg.to_dict().items():
        if key == "variant":
            continue
        if key == "conv_layers":
            val = ";".join("x".join(str(v) for v in layer) for layer in val)
        lines.append(f"config.{key}: {val}")
    lines.append(f"input_sizes: {' '.join(map(str, params.input_sizes))}")
    lines.append(f"output_sizes: {' '.join(map(str, params.output_sizes))}")
    if params.kernel:
        lines.append(f"kernel: {params.kernel}")
    if params.precision:
        lines.append(f"precision: {params.precision}")
    if params.vocab is not None:
        for f, vals in params.vocab.input_values.items():
            lines.append(f"vocab.in.{f}: {' '.join(map(str, vals))}")
        for p, vals in params.vocab.output_values.items():
            lines.append(f"vocab.out.{p}: {' '.join(map(str, vals))}")
    payload = []
    for name, arr in params.tensors.items():
        lines.append(f"tensor: {name} {_shape_text(arr.shape)}")
        payload.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(payload)
    lines.append(f"payload_bytes: {len(body)}")
    header = ("\n".join(lines) + "\n\n").encode("utf-8")
    Path(path).write_bytes(header + body)


def load_checkpoint(path) -> ModelParams:
    raw = Path(path).read_bytes()
    sep = raw.find(b"\n\n")
    if sep < 0:
        raise CheckpointError(f"{path}: no header terminator")
    header = raw[:sep].decode("utf-8").splitlines()
    body = raw[sep + 2 :]
    meta: dict[str, str] = {}
    tensors: list[tuple[str, tuple[int, ...]]] = []
    for line in header:
        if ":" not in line:
            raise CheckpointError(f"{path}: malformed header line '{line}'")
        key, val = (s.strip() for s in line.split(":", 1))
        if key == "tensor":
            name, shape = val.rsplit(" ", 1)
            tensors.append((name, _parse_shape(shape)))
        else:
            meta[key] = val
    version = meta.get("format_version")
    if version != str(CHECKPOINT_VERSION):
        raise VersionMismatchError(f"{path}: format_version {version}, expected {CHECKPOINT_VERSION}")
    declared = int(meta["payload_bytes"])
    needed = 4 * sum(math.prod(s) for _, s in tensors)
    if needed != declared:
        raise ShapeMismatchError(
            f"{path}: tensor shapes need {needed} bytes but header declares {declared}"
        )
    if len(body) < declared:
        raise PayloadLengthError(f"{path}: payload has {len(body)} bytes, expected {declared}")
    if len(body) > declared:
        raise PayloadLengthError(f"{path}: payload has {len(body) - declared} trailing bytes")

    cfg_kwargs = {"variant": meta["variant"]}
    for key, val in meta.items():
        if not key.startswith("config."):
            continue
        name = key[len("config.") :]
        if name == "conv_layers":
            cfg_kwargs[name] = tuple(tuple(int(v) for v in layer.split("x")) for layer in val.split(";"))
        elif name in ("dropout", "recurrent_dropout"):
            cfg_kwargs[name] = float(val)
        else:
            cfg_kwargs[name] = int(val)
    config = ModelConfig(**cfg_kwargs)

    arrays = {}
    offset = 0
    for name, shape in tensors:
        count = math.prod(shape)
        arr = np.frombuffer(body, dtype="<f4", count=count, offset=offset).astype(np.float64)
        arrays[name] = arr.reshape(shape)
        offset += 4 * count

    vocab = None
    in_vals = {k[len("vocab.in.") :]: v for k, v in meta.items() if k.startswith("vocab.in.")}
    out_vals = {k[len("vocab.out.") :]: v for k, v in meta.items() if k.startswith("vocab.out.")}
    if in_vals:
        vocab = Vocabulary(
            {f: [int(t) for t in in_vals[f].split()] for f in INPUT_FIELDS},
            {p: [int(t) for t in v.split()] for p, v in out_vals.items()},
        )
    return ModelParams(
        config,
        tuple(int(s) for s in meta["input_sizes"].split()),
        tuple(int(s) for s in meta["output_sizes"].split()),
        arrays,
        kernel=meta.get("kernel"),
        precision=meta.get("precision"),
        vocab=vocab,
    )
