"""Average Accuracy, Perfect Prediction and beam top-k reports."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .constraints import ConstraintPredicate, KernelSpec, validate_sequence
from .decoding import beam_search, constrained_beam_search, greedy_decode
from .encoding import Vocabulary
from .errors import DimensionError, EmptyInputError, ParameterError
from .models import SequenceModel


def _as_matrix(predictions, actuals) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray([tuple(s) for s in predictions])
    a = np.asarray([tuple(s) for s in actuals])
    if len(a) == 0:
        raise EmptyInputError("empty test set")
    if p.shape != a.shape or p.ndim != 2:
        raise DimensionError(f"predictions {p.shape} and actuals {a.shape} must be equal (samples, params) arrays")
    return p, a


def per_parameter_accuracy(predictions, actuals) -> list[float]:
    p, a = _as_matrix(predictions, actuals)
    return [float(c) / len(a) * 100.0 for c in (p == a).sum(axis=0)]


def average_accuracy(predictions, actuals) -> float:
    """(1/n) * sum_i (C_i / S_test * 100) over the n output parameters.

    Computed as sum_i C_i / (n * S_test) * 100 from integer counts, so equal
    per-parameter accuracies average to exactly that value.
    """
    p, a = _as_matrix(predictions, actuals)
    correct = int((p == a).sum())
    n, s_test = a.shape[1], a.shape[0]
    return correct / (n * s_test) * 100.0


def perfect_prediction(predictions, actuals) -> float:
    p, a = _as_matrix(predictions, actuals)
    return float(np.all(p == a, axis=1).sum()) / len(a) * 100.0


@dataclass
class EvalReport:
    per_parameter: list[float]
    average: float
    perfect: float
    samples: int
    invalid: int = 0
    topk: dict[int, "EvalReport"] = field(default_factory=dict)

    @classmethod
    def from_predictions(cls, predictions, actuals, invalid: int = 0) -> "EvalReport":
        return cls(
            per_parameter_accuracy(predictions, actuals),
            average_accuracy(predictions, actuals),
            perfect_prediction(predictions, actuals),
            len(actuals),
            invalid,
        )


def best_matching(beams, truth: Sequence[int]) -> tuple[int, ...] | None:
    """Beam with the most positionwise matches; earlier (higher log-prob) wins ties."""
    best, best_hits = None, -1
    for hyp in beams:
        hits = sum(int(a == b) for a, b in zip(hyp.tokens, truth))
        if hits > best_hits:
            best, best_hits = hyp.tokens, hits
    return best


def topk_metrics(
    model: SequenceModel,
    x: np.ndarray,
    y: np.ndarray,
    ks: Sequence[int],
    predicates: Sequence[ConstraintPredicate] | None = None,
    spec: KernelSpec | None = None,
    vocab: Vocabulary | None = None,
    descriptors: Sequence | None = None,
    threads: int = 1,
) -> dict[int, EvalReport]:
    """Per-k report. A sample is perfect when any of its k beams is the truth;
    accuracies use the best-matching beam.

    ``invalid`` counts samples whose search returned nothing or, when ``spec``,
    ``vocab`` and ``descriptors`` are given, whose top beam fails the spec's
    own predicates.
    """
    if any(k < 1 for k in ks):
        raise ParameterError("beam widths must be >= 1")
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0:
        raise EmptyInputError("empty test set")
    if predicates is not None and (spec is None or vocab is None or descriptors is None):
        raise ParameterError("constrained metrics need spec, vocab and descriptors")
    ctx = model.context()
    encoded = model.encode(x, ctx)
    miss = tuple([-1] * y.shape[1])
    checkable = spec is not None and vocab is not None and descriptors is not None

    def run(i: int, k: int):
        state = model.select(encoded, [i])
        if predicates is None:
            beams = beam_search(model, x[i], k, state=state)
        else:
            beams = constrained_beam_search(model, x[i], k, predicates, spec, vocab, descriptors[i], state=state)
        truth = tuple(int(t) for t in y[i])
        if not beams:
            return miss, False, True
        hit = any(h.tokens == truth for h in beams)
        bad = False
        if checkable:
            top = {n: vocab.output_values[n][t] for n, t in zip(spec.param_names, beams[0].tokens)}
            bad = validate_sequence(spec, descriptors[i], top) is not None
        return best_matching(beams, truth), hit, bad

    reports = {}
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for k in ks:
            rows = list(pool.map(lambda i: run(i, k), range(len(x))))
            preds = [r[0] for r in rows]
            report = EvalReport.from_predictions(preds, y)
            report.perfect = sum(r[1] for r in rows) / len(rows) * 100.0
            report.invalid = sum(r[2] for r in rows)
            reports[k] = report
    return reports


def greedy_report(model: SequenceModel, x: np.ndarray, y: np.ndarray) -> EvalReport:
    return EvalReport.from_predictions(greedy_decode(model, x), y)


def format_table(reports: dict[str, dict[int, EvalReport]]) -> str:
    """Aligned text table: one Avg and one Pft row per column group."""
    ks = sorted({k for r in reports.values() for k in r})
    label_w = max(12, *(len(n) for n in reports)) if reports else 12
    head = f"{'':<{label_w}} {'metric':<6} " + " ".join(f"{'k=' + str(k):>8}" for k in ks)
    lines = [head, "-" * len(head)]
    for name, per_k in reports.items():
        for metric, attr in (("Avg", "average"), ("Pft", "perfect")):
            cells = " ".join(
                f"{getattr(per_k[k], attr):8.2f}" if k in per_k else f"{'-':>8}" for k in ks
            )
            lines.append(f"{name if metric == 'Avg' else '':<{label_w}} {metric:<6} {cells}")
    return "\n".join(lines)


CSV_HEADER = ("mode", "k", "samples", "average_accuracy", "perfect_prediction", "invalid")


def format_csv(reports: dict[str, dict[int, EvalReport]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for mode, per_k in reports.items():
        for k in sorted(per_k):
            r = per_k[k]
            writer.writerow((mode, k, r.samples, f"{r.average:.4f}", f"{r.perfect:.4f}", r.invalid))
    return buf.getvalue()
