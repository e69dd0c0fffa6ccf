"""Teacher-forced training with Adam and per-epoch logging."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError
from .models import ModelParams, SequenceModel, build_model
from .nn import autograd as ag
from .nn.layers import cross_entropy_from_logits
from .nn.optim import AdamState, adam_step, clip_global_norm

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    lr: float = 1e-3
    clip_norm: float = 5.0


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    train_avg_acc: float
    test_loss: float
    test_avg_acc: float


def sequence_loss(model: SequenceModel, x, y, ctx) -> tuple[ag.Var, list[ag.Var]]:
    """Mean per-position cross-entropy under teacher forcing."""
    logits = model.forward_logits(x, teacher=y, ctx=ctx)
    losses = [cross_entropy_from_logits(l, y[:, i]) for i, l in enumerate(logits)]
    loss = losses[0]
    for extra in losses[1:]:
        loss = loss + extra
    return ag.mul(loss, 1.0 / len(losses)), logits


def loss_and_grads(model: SequenceModel, x, y, train: bool = False, rng=None) -> tuple[float, dict[str, np.ndarray]]:
    ctx = model.context(train=train, rng=rng, requires_grad=True)
    loss, _ = sequence_loss(model, x, y, ctx)
    loss.backward()
    grads = {}
    for name, var in ctx.weights.items():
        grads[name] = var.grad if var.grad is not None else np.zeros_like(var.value)
    return float(loss.value), grads


def evaluate_loss_acc(model: SequenceModel, x, y, batch_size: int = 512) -> tuple[float, float]:
    """Teacher-forced loss and greedy average accuracy (percent), inference mode."""
    if len(x) == 0:
        return float("nan"), float("nan")
    total_loss = 0.0
    correct = np.zeros(model.num_positions)
    for start in range(0, len(x), batch_size):
        xb, yb = x[start : start + batch_size], y[start : start + batch_size]
        ctx = model.context()
        loss, _ = sequence_loss(model, xb, yb, ctx)
        total_loss += float(loss.value) * len(xb)
        greedy = model.forward_logits(xb, None, ctx)
        for i, l in enumerate(greedy):
            correct[i] += np.sum(l.value.argmax(axis=-1) == yb[:, i])
    return total_loss / len(x), float(np.mean(correct / len(x)) * 100.0)


def train(
    params: ModelParams,
    train_x: np.ndarray,
    train_y: np.ndarray,
    config: TrainConfig,
    test_x: np.ndarray | None = None,
    test_y: np.ndarray | None = None,
    on_epoch=None,
) -> tuple[ModelParams, list[EpochLog]]:
    """Train a copy of ``params``; inputs are (N, 7) and (N, T_out) token arrays."""
    train_x = np.asarray(train_x, dtype=np.int64)
    train_y = np.asarray(train_y, dtype=np.int64)
    if len(train_x) == 0:
        raise EmptyInputError("empty training set")
    params = params.copy()
    model = build_model(params)
    rng = np.random.default_rng(config.seed)
    opt = AdamState(lr=config.lr)
    history: list[EpochLog] = []
    n = len(train_x)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        loss_sum = 0.0
        correct = np.zeros(model.num_positions)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb, yb = train_x[idx], train_y[idx]
            ctx = model.context(train=True, rng=rng, requires_grad=True)
            loss, logits = sequence_loss(model, xb, yb, ctx)
            loss.backward()
            grads = {k: v.grad for k, v in ctx.weights.items() if v.grad is not None}
            clip_global_norm(grads, config.clip_norm)
            adam_step(params.tensors, grads, opt)
            loss_sum += float(loss.value) * len(idx)
            for i, l in enumerate(logits):
                correct[i] += np.sum(l.value.argmax(axis=-1) == yb[:, i])
        train_loss = loss_sum / n
        train_acc = float(np.mean(correct / n) * 100.0)
        if test_x is not None and len(test_x):
            test_loss, test_acc = evaluate_loss_acc(model, np.asarray(test_x), np.asarray(test_y))
        else:
            test_loss, test_acc = float("nan"), float("nan")
        entry = EpochLog(epoch, train_loss, train_acc, test_loss, test_acc)
        history.append(entry)
        log.info(
            "epoch %d train_loss %.4f train_acc %.2f test_loss %.4f test_acc %.2f",
            epoch, train_loss, train_acc, test_loss, test_acc,
        )
        if on_epoch is not None:
            on_epoch(entry)
    return params, history
