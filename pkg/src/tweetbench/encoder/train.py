"""Fine-tuning and MLM pretraining loops (AdamW, linear warmup/decay, norm clipping)."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from math import ceil
from pathlib import Path
from typing import Sequence

import numpy as np

from ..corpus import Dataset
from ..tokenizer import TextEncoder, TokenSequence, apply_mlm_mask, stack_sequences
from .config import ConfigError, TrainConfig
from .model import (EncoderModel, classification_loss_and_grads, mlm_loss_and_grads,
                    predict_logits)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_accuracy: float
    dev_accuracy: float
    learning_rate: float
    wall_time: float = field(default=0.0, compare=False)


class AdamW:
    """Adam with decoupled weight decay; matrices and embeddings decay, vectors do not."""

    def __init__(self, params: dict[str, np.ndarray], tcfg: TrainConfig):
        self.cfg = tcfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads, lr: float) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + c.adam_eps)
            if c.weight_decay and p.ndim >= 2:
                update = update + c.weight_decay * p
            p -= lr * update


def lr_at(step: int, total_steps: int, tcfg: TrainConfig) -> float:
    """Linear warmup over ``warmup_fraction`` of the steps, then linear decay to 0."""
    warmup = int(round(tcfg.warmup_fraction * total_steps))
    if step < warmup:
        return tcfg.learning_rate * (step + 1) / warmup
    return tcfg.learning_rate * max(0.0, (total_steps - step) / max(1, total_steps - warmup))


def clip_by_global_norm(grads: dict, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= scale
    return norm


def accuracy(model: EncoderModel, seqs: Sequence[TokenSequence], y: np.ndarray) -> float:
    if len(seqs) == 0:
        return 0.0
    return float((predict_logits(model, seqs).argmax(axis=1) == y).mean())


def label_indices(ds: Dataset) -> np.ndarray:
    index = {l: i for i, l in enumerate(ds.scale.labels)}
    return np.array([index[ex.label] for ex in ds.examples], dtype=np.int64)


def train_classifier(model: EncoderModel, train: Dataset, dev: Dataset, tcfg: TrainConfig,
                     text_encoder: TextEncoder, log_path=None,
                     stop_at_train_accuracy: float | None = None):
    """Fine-tune ``model`` on ``train`` and return (best-dev checkpoint, history).

    The checkpoint is the epoch with the highest dev accuracy (earliest on
    ties). The input model is not modified. ``stop_at_train_accuracy`` ends
    training early once train accuracy reaches that value.
    """
    if len(train) == 0 or len(dev) == 0:
        raise ConfigError("train and dev datasets must be non-empty")
    if train.scale != dev.scale:
        raise ConfigError(f"train scale {train.scale.kind} != dev scale {dev.scale.kind}")
    if model.cfg.num_classes != len(train.scale):
        raise ConfigError(f"model has {model.cfg.num_classes} classes but the "
                          f"{train.scale.kind} scale has {len(train.scale)}")
    if text_encoder.max_len > model.cfg.max_len:
        raise ConfigError("encoding max_len exceeds the model's position table")

    dtype = np.float64 if tcfg.dtype == "float64" else np.float32
    work = model.astype(dtype)
    X, y = text_encoder.encode_dataset(train), label_indices(train)
    Xd, yd = text_encoder.encode_dataset(dev), label_indices(dev)

    shuffle_ss, dropout_ss = np.random.SeedSequence(tcfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    dropout_rng = np.random.default_rng(dropout_ss) if work.cfg.dropout_rate > 0 else None

    n = len(X)
    steps_per_epoch = ceil(n / tcfg.batch_size)
    total_steps = steps_per_epoch * tcfg.epochs
    opt = AdamW(work.params, tcfg)
    history: list[EpochRecord] = []
    best, best_acc = work.copy(), -1.0
    step = 0
    t0 = time.perf_counter()
    log = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, tcfg.epochs + 1):
            order = shuffle_rng.permutation(n)
            loss_sum = 0.0
            lr = 0.0
            for start in range(0, n, tcfg.batch_size):
                idx = order[start:start + tcfg.batch_size]
                ids, segs, mask = stack_sequences([X[i] for i in idx])
                loss, grads, _ = classification_loss_and_grads(
                    work, ids, segs, mask, y[idx], dropout_rng)
                if not np.isfinite(loss) or not all(np.isfinite(g).all() for g in grads.values()):
                    raise TrainingDivergedError(
                        f"non-finite loss/gradient at epoch {epoch}, step {step} "
                        f"(lr {lr_at(step, total_steps, tcfg):.3g}, loss {loss})")
                clip_by_global_norm(grads, tcfg.max_grad_norm)
                lr = lr_at(step, total_steps, tcfg)
                opt.step(work.params, grads, lr)
                loss_sum += loss * len(idx)
                step += 1
            train_acc = accuracy(work, X, y)
            dev_acc = accuracy(work, Xd, yd)
            rec = EpochRecord(epoch, loss_sum / n, train_acc, dev_acc, lr,
                              time.perf_counter() - t0)
            history.append(rec)
            if log:
                log.write(json.dumps(asdict(rec)) + "\n")
                log.flush()
            if dev_acc > best_acc:
                best, best_acc = work.copy(), dev_acc
            if stop_at_train_accuracy is not None and train_acc >= stop_at_train_accuracy:
                break
    finally:
        if log:
            log.close()
    return best, history


def pretrain_mlm(model: EncoderModel, seqs: Sequence[TokenSequence], steps: int,
                 tcfg: TrainConfig, rate: float = 0.15, random_replace: bool = False):
    """Masked-LM training on unlabeled sequences; returns (model, per-step losses).

    Each step draws a batch and a fresh mask from the run's seed.
    """
    if not model.cfg.mlm_head:
        raise ConfigError("pretraining needs EncoderConfig(mlm_head=True)")
    work = model.copy()
    rng = np.random.default_rng(tcfg.seed)
    dropout_rng = np.random.default_rng(tcfg.seed + 1) if work.cfg.dropout_rate > 0 else None
    opt = AdamW(work.params, tcfg)
    losses = []
    for step in range(steps):
        idx = rng.choice(len(seqs), size=min(tcfg.batch_size, len(seqs)), replace=False)
        batch = [seqs[i] for i in idx]
        masked = apply_mlm_mask(batch, rate, int(rng.integers(2**31)),
                                random_replace, work.cfg.vocab_size)
        if masked.n_masked == 0:
            continue
        loss, grads = mlm_loss_and_grads(work, masked, dropout_rng)
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"non-finite MLM loss at step {step}")
        clip_by_global_norm(grads, tcfg.max_grad_norm)
        opt.step(work.params, grads, lr_at(step, steps, tcfg))
        losses.append(loss)
    return work, losses


def read_history(path) -> list[EpochRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [EpochRecord(**json.loads(line)) for line in lines if line.strip()]
