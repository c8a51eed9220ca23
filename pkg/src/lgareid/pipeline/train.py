"""SGD training of the composite class-balanced + triplet objective."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from lgareid.losses import ClassFrequencyTable, class_balanced_loss, softmargin_triplet_loss, total_loss
from lgareid.pipeline.augment import augment
from lgareid.pipeline.model import Model, ModelConfig
from lgareid.pipeline.schedule import SGD, TrainSchedule
from lgareid.sampler import PKSampler, SamplerConfig

log = logging.getLogger(__name__)

LOG_HEADER = ("epoch", "lr", "cb_loss", "tri_loss", "total_loss")


class NumericalError(RuntimeError):
    pass


def _check_finite(**tensors) -> None:
    for name, value in tensors.items():
        if not np.isfinite(value).all():
            raise NumericalError(f"non-finite values in {name}")


@dataclass
class EpochLog:
    epoch: int
    lr: float
    cb_loss: float
    tri_loss: float
    total_loss: float


@dataclass
class TrainResult:
    model: Model
    log: list[EpochLog] = field(default_factory=list)

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_HEADER)
        for row in self.log:
            w.writerow([row.epoch, f"{row.lr:.6g}", f"{row.cb_loss:.10g}", f"{row.tri_loss:.10g}",
                        f"{row.total_loss:.10g}"])
        return buf.getvalue()


def batch_losses(model: Model, x: np.ndarray, labels: np.ndarray, freq: ClassFrequencyTable,
                 margin: float = 0.0, mining: str = "batch-hard", train: bool = True, update_stats: bool = True):
    """Forward one batch; returns ``(cb, tri, d_logits, d_pre)``."""
    out = model.forward(x, train=train, update_stats=update_stats)
    _check_finite(feature_map=out.fmap, embeddings=out.pre_bn, logits=out.logits)
    cb, d_logits = class_balanced_loss(out.logits, labels, freq)
    tri, d_pre = softmargin_triplet_loss(out.pre_bn, labels, margin, mining)
    _check_finite(cb_loss=cb, tri_loss=tri)
    return cb, tri, d_logits, d_pre


def _augmented(inputs: np.ndarray, idx: np.ndarray, cfg: ModelConfig, seed: int, epoch: int, j: int) -> np.ndarray:
    _check_finite(input_batch=inputs[idx])
    rng = np.random.default_rng([seed, epoch, j, 7])
    return np.stack([augment(inputs[i], cfg.flip_p, cfg.erase_p, rng) for i in idx])


def train(inputs: np.ndarray, labels: np.ndarray, cfg: ModelConfig, schedule: TrainSchedule,
          sampler_cfg: SamplerConfig, freq: ClassFrequencyTable, seed: int = 0, epochs: int | None = None,
          margin: float = 0.0, on_epoch: Callable[[EpochLog], None] | None = None) -> TrainResult:
    """Train from scratch and return the model with its per-epoch log.

    Row ``epoch=0`` holds the untrained model's losses on the first epoch's
    batches; row ``e`` holds the losses after epoch ``e``'s updates,
    re-evaluated on that epoch's batches.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(inputs) != len(labels):
        raise ValueError("inputs and labels differ in length")
    if labels.max() >= cfg.num_classes or freq.num_classes != cfg.num_classes:
        raise ValueError("labels, frequency table and model disagree on the number of classes")
    epochs = epochs or schedule.epochs
    model = Model.create(cfg, seed)
    opt = SGD(model.params, schedule.momentum, schedule.weight_decay)
    sampler = PKSampler(labels, sampler_cfg)
    result = TrainResult(model)

    def evaluate(epoch: int, batches: list[tuple[int, np.ndarray]], lr: float) -> EpochLog:
        cbs, tris = [], []
        for j, idx in batches:
            x = _augmented(inputs, idx, cfg, seed, epoch if epoch else 1, j)
            cb, tri, _, _ = batch_losses(model, x, labels[idx], freq, margin, update_stats=False)
            cbs.append(cb)
            tris.append(tri)
        cb, tri = float(np.mean(cbs)), float(np.mean(tris))
        row = EpochLog(epoch, lr, cb, tri, total_loss(cb, tri))
        result.log.append(row)
        if on_epoch:
            on_epoch(row)
        return row

    evaluate(0, list(enumerate(sampler.epoch(1))), 0.0)
    for epoch in range(1, epochs + 1):
        lr = schedule.lr(epoch)
        batches = list(enumerate(sampler.epoch(epoch)))
        for j, idx in batches:
            x = _augmented(inputs, idx, cfg, seed, epoch, j)
            cb, tri, d_logits, d_pre = batch_losses(model, x, labels[idx], freq, margin)
            grads = model.backward(d_logits, d_pre)
            for name, g in grads.items():
                if not np.isfinite(g).all():
                    raise NumericalError(f"non-finite gradient for {name} at epoch {epoch}, batch {j}")
            opt.step(grads, lr)
        row = evaluate(epoch, batches, lr)
        log.info("epoch %d lr %.2e cb %.4f tri %.4f total %.4f", epoch, lr, row.cb_loss, row.tri_loss,
                 row.total_loss)
    return result
