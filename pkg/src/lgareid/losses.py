"""Class-balanced softmax loss and soft-margin triplet loss with analytic gradients.

Labels are 0-based class indices throughout.  Both losses reduce over the
batch with the arithmetic mean and return ``(loss, grad)`` where ``grad``
is the derivative of the reduced loss with respect to the loss input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ClassFrequencyTable:
    """Per-class training counts ``n_y`` and the weights ``(1-beta)/(1-beta**n_y)``."""

    counts: np.ndarray
    beta: float = 0.0

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 1 or counts.size == 0:
            raise ValueError("counts must be a non-empty 1-D sequence")
        if (counts < 1).any():
            raise ValueError(f"every class needs at least one sample; got counts {counts.tolist()}")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_labels(cls, labels: Sequence[int], num_classes: int | None = None, beta: float = 0.0):
        labels = np.asarray(labels, dtype=np.int64)
        if num_classes is None:
            num_classes = int(labels.max()) + 1
        return cls(np.bincount(labels, minlength=num_classes), beta)

    @property
    def num_classes(self) -> int:
        return int(self.counts.size)

    @property
    def weights(self) -> np.ndarray:
        beta = float(self.beta)
        return np.array([(1.0 - beta) / (1.0 - beta ** int(n)) for n in self.counts])

    def with_beta(self, beta: float) -> "ClassFrequencyTable":
        return ClassFrequencyTable(self.counts, beta)


def _check_logits(logits: np.ndarray, labels: np.ndarray) -> None:
    if logits.ndim != 2:
        raise ValueError(f"logits must be (batch, classes), got shape {logits.shape}")
    if labels.shape != (logits.shape[0],):
        raise ValueError(f"labels shape {labels.shape} does not match batch size {logits.shape[0]}")
    if not np.isfinite(logits).all():
        raise ValueError("logits contain non-finite values")
    bad = (labels < 0) | (labels >= logits.shape[1])
    if bad.any():
        raise ValueError(f"label {int(labels[bad][0])} out of range [0, {logits.shape[1]})")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def class_balanced_loss(logits, labels, freq: ClassFrequencyTable) -> tuple[float, np.ndarray]:
    """Mean over the batch of ``-weight(y) * log softmax(z)_y``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    _check_logits(logits, labels)
    if freq.num_classes != logits.shape[1]:
        raise ValueError(f"frequency table covers {freq.num_classes} classes, logits have {logits.shape[1]}")
    b = logits.shape[0]
    w = freq.weights[labels]
    rows = np.arange(b)
    loss = float(np.mean(-w * log_softmax(logits)[rows, labels]))
    grad = softmax(logits)
    grad[rows, labels] -= 1.0
    grad *= (w / b)[:, None]
    return loss, grad


def total_loss(cb: float, tri: float) -> float:
    return cb + tri


def pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - x[None, :, :]
    return np.einsum("ijc,ijc->ij", diff, diff)


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def mine_batch_hard(sq: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Farthest positive and nearest negative per anchor (first index on ties)."""
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    counts = same.sum(axis=1)
    if (counts == 0).any():
        lonely = int(labels[np.argmax(counts == 0)])
        raise ValueError(f"identity {lonely} has a single sample in the batch; batch-hard mining needs >= 2")
    other = labels[:, None] != labels[None, :]
    if not other.any(axis=1).all():
        raise ValueError("batch contains a single identity; no negatives to mine")
    pos = np.argmax(np.where(same, sq, -np.inf), axis=1)
    neg = np.argmin(np.where(other, sq, np.inf), axis=1)
    return pos, neg


def all_valid_triplets(labels: np.ndarray) -> np.ndarray:
    same = labels[:, None] == labels[None, :]
    a, p, n = np.nonzero(same[:, :, None] & ~np.eye(len(labels), dtype=bool)[:, :, None] & ~same[:, None, :])
    if a.size == 0:
        raise ValueError("batch admits no valid (anchor, positive, negative) triplet")
    return np.stack([a, p, n], axis=1)


def softmargin_triplet_loss(embeddings, labels, margin: float = 0.0, mining: str = "batch-hard"
                            ) -> tuple[float, np.ndarray]:
    """Soft-margin triplet loss on squared Euclidean distances.

    ``mining="batch-hard"`` uses one triplet per anchor; ``"all-valid"``
    averages over every valid triplet.  Mining is treated as constant when
    differentiating.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim != 2 or labels.shape != (x.shape[0],):
        raise ValueError(f"embeddings {x.shape} and labels {labels.shape} are not aligned")
    if not np.isfinite(x).all():
        raise ValueError("embeddings contain non-finite values")
    if mining == "batch-hard":
        pos, neg = mine_batch_hard(pairwise_sq_dists(x), labels)
        trip = np.stack([np.arange(len(x)), pos, neg], axis=1)
    elif mining == "all-valid":
        trip = all_valid_triplets(labels)
    else:
        raise ValueError(f"unknown mining mode {mining!r}")
    a, p, n = trip.T
    d_ap = x[a] - x[p]
    d_an = x[a] - x[n]
    z = (d_ap * d_ap).sum(axis=1) - (d_an * d_an).sum(axis=1) + margin
    loss = float(np.mean(_softplus(z)))
    s = (_sigmoid(z) / len(trip))[:, None]
    grad = np.zeros_like(x)
    np.add.at(grad, a, 2.0 * s * (d_ap - d_an))
    np.add.at(grad, p, -2.0 * s * d_ap)
    np.add.at(grad, n, 2.0 * s * d_an)
    return loss, grad
