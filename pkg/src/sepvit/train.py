"""Desk-scale training and evaluation loops."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass

import numpy as np

from .backbone import SepViT
from .data import SyntheticDataset
from .errors import NumericError, ShapeError
from .tensor import Rng, Tape, Tensor, backward, cross_entropy

log = logging.getLogger(__name__)


class SGDW:
    """Heavy-ball momentum with decoupled weight decay.

    Decay applies to tensors with two or more axes (projections, convs);
    biases, LayerNorm affines and window tokens are left alone.
    """

    def __init__(self, params, lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = [p for p in params if p.requires_grad]
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad
            if self.weight_decay and p.ndim >= 2:
                p.data *= 1.0 - lr * self.weight_decay
            p.data -= lr * v

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def cosine_lr(base: float, step: int, total: int, warmup: int = 0) -> float:
    """Linear warm-up over ``warmup`` steps, then cosine decay to 0 at ``total``."""
    if step < warmup:
        return base * (step + 1) / warmup
    return 0.5 * base * (1.0 + math.cos(math.pi * (step - warmup) / max(total - warmup, 1)))


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    grads = [p.grad for p in params if p.grad is not None]
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
    if norm > max_norm:
        for g in grads:
            g *= max_norm / norm
    return norm


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    loss: float
    train_acc: float


def predict(model: SepViT, images: np.ndarray, batch: int = 64) -> np.ndarray:
    model.eval()
    preds = []
    for i in range(0, len(images), batch):
        logits = model(Tensor(images[i : i + batch], dtype=model.dtype))
        preds.append(logits.data.argmax(axis=-1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def accuracy(model: SepViT, ds: SyntheticDataset, batch: int = 64) -> float:
    return float((predict(model, ds.images, batch) == ds.labels).mean())


def train(
    model: SepViT,
    ds: SyntheticDataset,
    epochs: int,
    batch: int,
    lr: float,
    seed: int,
    momentum: float = 0.9,
    weight_decay: float = 0.05,
    warmup_epochs: int = 5,
    clip_norm: float | None = None,
    on_epoch=None,
) -> list[EpochMetrics]:
    """Mini-batch training: linear warm-up, then a cosine-decayed learning rate.

    Batch order and droppath masks come from ``Rng(seed)``, so two runs with
    the same seed and model produce identical metrics.
    """
    R = model.config.input_resolution
    if ds.images.shape[1:] != (model.config.in_chans, R, R):
        raise ShapeError(f"dataset images {ds.images.shape[1:]} do not fit a {R}px model")
    rng = Rng(seed)
    opt = SGDW(model.parameters(), lr, momentum, weight_decay)
    n = len(ds)
    steps_per_epoch = math.ceil(n / batch)
    total = epochs * steps_per_epoch
    warmup = min(warmup_epochs, epochs) * steps_per_epoch
    history = []
    step = 0
    for epoch in range(1, epochs + 1):
        model.train()
        order = rng.permutation(n)
        losses = []
        for i in range(0, n, batch):
            idx = order[i : i + batch]
            x = Tensor(ds.images[idx], dtype=model.dtype)
            step_lr = cosine_lr(lr, step, total, warmup)
            with Tape() as tape:
                loss = cross_entropy(model(x, rng), ds.labels[idx])
            if not np.isfinite(loss.data):
                raise NumericError(f"loss became non-finite at epoch {epoch}, step {step} (lr={step_lr:.4g})")
            opt.zero_grad()
            backward(loss, tape)
            if clip_norm is not None:
                clip_grad_norm(opt.params, clip_norm)
            opt.step(step_lr)
            losses.append(float(loss.data) * len(idx))
            step += 1
        m = EpochMetrics(epoch, cosine_lr(lr, step, total, warmup), sum(losses) / n, accuracy(model, ds))
        log.info("epoch %d loss %.4f acc %.4f", m.epoch, m.loss, m.train_acc)
        history.append(m)
        if on_epoch is not None:
            on_epoch(m)
    model.eval()
    return history


def metrics_csv(history: list[EpochMetrics]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "lr", "loss", "train_acc"])
    for m in history:
        w.writerow([m.epoch, repr(m.lr), repr(m.loss), repr(m.train_acc)])
    return buf.getvalue()


@dataclass
class EvalReport:
    accuracy: float
    per_class: np.ndarray
    confusion: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        K = len(self.per_class)
        w.writerow(["true_class", "accuracy"] + [f"pred_{j}" for j in range(K)])
        for k in range(K):
            w.writerow([k, repr(float(self.per_class[k]))] + [int(c) for c in self.confusion[k]])
        w.writerow(["all", repr(self.accuracy)] + [""] * K)
        return buf.getvalue()


def evaluate(model: SepViT, ds: SyntheticDataset) -> EvalReport:
    R = model.config.input_resolution
    if ds.resolution != R:
        raise ShapeError(f"dataset resolution {ds.resolution} does not match model input {R}")
    preds = predict(model, ds.images)
    K = max(ds.num_classes, model.config.num_classes)
    conf = np.zeros((K, K), dtype=np.int64)
    np.add.at(conf, (ds.labels, preds), 1)
    support = conf.sum(axis=1)
    per_class = np.divide(np.diag(conf), support, out=np.zeros(K), where=support > 0)
    return EvalReport(float((preds == ds.labels).mean()), per_class, conf)
