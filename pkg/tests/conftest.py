import itertools
from pathlib import Path

import numpy as np
import pytest

from kernelseer.models import ModelConfig


def central_difference(f, x: np.ndarray, index, eps: float = 1e-5) -> float:
    """d f / d x[index] by central difference; ``x`` is perturbed in place and restored."""
    old = x[index]
    x[index] = old + eps
    up = f()
    x[index] = old - eps
    down = f()
    x[index] = old
    return (up - down) / (2 * eps)


def rel_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def tiny_config(variant: str, **kw) -> ModelConfig:
    base = dict(
        variant=variant,
        encoder_size=5,
        pre_attention_size=5,
        post_attention_size=6,
        attention_dense=4,
        conv_layers=((4, 3, 1), (3, 2, 1)),
        decoder_size=5,
        dropout=0.0,
        recurrent_dropout=0.0,
    )
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


FIXTURES = Path(__file__).parent / "fixtures"


def _expand_range(text: str) -> tuple[int, ...]:
    text = text.strip()
    if text.startswith("2^{"):
        lo, hi = text[3:-1].split("-")
        return tuple(2**e for e in range(int(lo), int(hi) + 1))
    if "," in text:
        return tuple(int(v) for v in text.split(","))
    lo, hi = text.split("-")
    return tuple(range(int(lo), int(hi) + 1))


def load_table_fixture() -> dict[str, list[tuple[str, tuple[int, ...]]]]:
    """Kernel -> ordered (parameter, values) rows from the checked-in transcription."""
    table: dict[str, list[tuple[str, tuple[int, ...]]]] = {}
    for line in (FIXTURES / "kernel_output_parameters.txt").read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        kernel, param, values = (part.strip() for part in line.split("|"))
        table.setdefault(kernel, []).append((param, _expand_range(values)))
    return table


def count_by_enumeration(rows) -> int:
    """Count every full assignment one by one."""
    return sum(1 for _ in itertools.product(*(values for _, values in rows)))
