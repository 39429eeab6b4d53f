"""Mini-batch ADAM training on the combined L2 + L1 objective."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import RgbdSample
from .model import ModelWeights, pagnet_forward
from .optim import adam_step
from .tensor import Tape, Tensor
from .weights_io import save_weights

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 8
    learning_rate: float = 1e-4
    epochs: int = 30
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    scale: int = 2
    seed: int = 0
    checkpoint_every: int = 0  # steps; 0 disables
    max_steps: int = 0  # 0 means no cap

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")


@dataclass
class LossRecord:
    step: int
    epoch: int
    loss: float
    l1: float
    l2: float


class TrainingDivergedError(FloatingPointError):
    pass


def combined_loss(pred: Tensor, target: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """``(l2 + l1, l2, l1)``; per-element means, so equal to the batch mean of per-sample losses."""
    l2, l1 = T.loss_terms(pred, target)
    return T.add(l2, l1), l2, l1


def collate(samples: Sequence[RgbdSample], dtype=np.float32) -> tuple[Tensor, Tensor, Tensor]:
    dl = np.stack([s.depth_lr for s in samples])[:, None]
    ih = np.stack([s.rgb for s in samples])
    dh = np.stack([s.depth_hr for s in samples])[:, None]
    return Tensor(dl.astype(dtype)), Tensor(ih.astype(dtype)), Tensor(dh.astype(dtype))


def batch_order(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Seeded permutation split into batches; the short tail is padded by wrapping."""
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    nb = math.ceil(n / batch_size)
    padded = np.resize(perm, nb * batch_size)
    return [padded[i * batch_size:(i + 1) * batch_size] for i in range(nb)]


def train_step(mw: ModelWeights, batch, cfg: TrainConfig) -> tuple[float, float, float]:
    dl, ih, dh = batch
    with Tape() as tape:
        pred = pagnet_forward(dl, ih, mw)
        loss, l2, l1 = combined_loss(pred, dh)
    values = (loss.item(), l2.item(), l1.item())
    if not all(math.isfinite(v) for v in values):
        return values
    tape.backward(loss)
    adam_step(mw.params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    return values


def train(mw: ModelWeights, dataset: Sequence[RgbdSample], cfg: TrainConfig,
          checkpoint_path=None) -> tuple[ModelWeights, list[LossRecord]]:
    if not dataset:
        raise ValueError("training dataset is empty")
    factor = mw.config.factor
    for s in dataset:
        if s.scale != factor:
            raise ValueError(f"sample {s.provenance!r} has scale {s.scale}, model expects {factor}")
    dtype = next(iter(mw.params.values())).value.dtype
    history: list[LossRecord] = []
    step = 0
    for epoch in range(cfg.epochs):
        for bi, idx in enumerate(batch_order(len(dataset), cfg.batch_size, cfg.seed, epoch)):
            batch = collate([dataset[i] for i in idx], dtype)
            loss, l2, l1 = train_step(mw, batch, cfg)
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, batch {bi} (step {step})")
            history.append(LossRecord(step, epoch, loss, l1, l2))
            step += 1
            if step % 50 == 0:
                log.info("step %d epoch %d loss %.6f", step, epoch, loss)
            if checkpoint_path and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                save_weights(mw, checkpoint_path)
            if cfg.max_steps and step >= cfg.max_steps:
                return mw, history
    if checkpoint_path:
        save_weights(mw, checkpoint_path)
    return mw, history


def write_history(history: Sequence[LossRecord], path) -> None:
    with Path(path).open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "epoch", "loss", "l1", "l2"])
        for r in history:
            w.writerow([r.step, r.epoch, repr(r.loss), repr(r.l1), repr(r.l2)])
