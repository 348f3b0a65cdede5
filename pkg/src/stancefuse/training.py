"""Minibatch Adam on cross-entropy, with a per-epoch log."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import rng as rng_mod
from . import tensor as T
from .config import AblationVariant, ModelConfig
from .dataset import batches
from .errors import DataError, NumericError, TrainingError
from .fusion import batch_logits
from .params import ParamStore
from .pipeline import PreparedExample

log = logging.getLogger(__name__)

FROZEN_PREFIXES = ("text.", "vision.")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    epochs: int = 10
    seed: int = 0
    freeze_encoders: bool = False


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    dev_loss: float | None
    dev_acc: float | None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


class Adam:
    def __init__(self, store: ParamStore, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, skip_prefixes=()):
        self.store = store
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.skip = tuple(skip_prefixes)
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in store.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in store.items()}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in self.store.items():
            if p.grad is None or name.startswith(self.skip):
                continue
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad**2
            if self.lr:
                p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def evaluate_loss_acc(
    examples: Sequence[PreparedExample], store: ParamStore, cfg: ModelConfig, variant: AblationVariant, batch: int = 64
) -> tuple[float, float]:
    total, correct = 0.0, 0
    with T.no_grad():
        for start in range(0, len(examples), batch):
            chunk = examples[start : start + batch]
            logits, preds = batch_logits(chunk, store, cfg, variant)
            total += T.cross_entropy(logits, [ex.label for ex in chunk]).item() * len(chunk)
            correct += sum(int(pr.label) == ex.label for pr, ex in zip(preds, chunk))
    return total / len(examples), correct / len(examples)


def train(
    train_examples: Sequence[PreparedExample],
    dev_examples: Sequence[PreparedExample],
    store: ParamStore,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    variant: AblationVariant = AblationVariant.FULL,
    log_path=None,
) -> tuple[ParamStore, list[EpochRecord]]:
    """Train ``store`` in place; returns it with the epoch log.

    Shuffling and dropout masks come from named streams of ``train_cfg.seed``,
    so equal inputs give bit-identical parameters.
    """
    if not train_examples:
        raise DataError("training split is empty")
    skip = FROZEN_PREFIXES if train_cfg.freeze_encoders else ()
    opt = Adam(store, train_cfg.lr, train_cfg.beta1, train_cfg.beta2, train_cfg.eps, skip)
    history: list[EpochRecord] = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, train_cfg.epochs + 1):
            for b, chunk in enumerate(batches(train_examples, train_cfg.batch_size, train_cfg.seed, "train", epoch)):
                drop_rng = rng_mod.stream(train_cfg.seed, "dropout", epoch, b)
                try:
                    store.zero_grad()
                    logits, _ = batch_logits(chunk, store, model_cfg, variant, train=True, rng=drop_rng)
                    loss = T.cross_entropy(logits, [ex.label for ex in chunk])
                    T.backward(loss)
                    opt.step()
                    for name, p in store.items():
                        if not np.isfinite(p.data).all():
                            raise NumericError(f"parameter {name} became non-finite")
                except NumericError as exc:
                    raise TrainingError(f"training diverged at epoch {epoch}, batch {b}: {exc}") from exc
            store.zero_grad()
            tr_loss, tr_acc = evaluate_loss_acc(train_examples, store, model_cfg, variant)
            dev_loss = dev_acc = None
            if dev_examples:
                dev_loss, dev_acc = evaluate_loss_acc(dev_examples, store, model_cfg, variant)
            rec = EpochRecord(epoch, tr_loss, tr_acc, dev_loss, dev_acc)
            history.append(rec)
            log.info("epoch %d train_loss=%.4f train_acc=%.3f dev_acc=%s", epoch, tr_loss, tr_acc, dev_acc)
            if log_fh:
                log_fh.write(rec.to_json() + "\n")
                log_fh.flush()
    finally:
        if log_fh:
            log_fh.close()
    store.zero_grad()
    return store, history


def predict(
    examples: Sequence[PreparedExample], store: ParamStore, cfg: ModelConfig, variant: AblationVariant
) -> tuple[np.ndarray, np.ndarray]:
    """Predicted labels and probability rows, eval mode."""
    labels, probs = [], []
    with T.no_grad():
        for ex in examples:
            _, (pr,) = batch_logits([ex], store, cfg, variant)
            labels.append(int(pr.label))
            probs.append(pr.probabilities)
    return np.asarray(labels, dtype=np.int64), np.asarray(probs).reshape(-1, 3)
