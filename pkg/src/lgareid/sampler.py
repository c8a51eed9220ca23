"""Random-identity P x K batch sampler."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np


@dataclass(frozen=True)
class SamplerConfig:
    P: int = 8
    K: int = 6
    seed: int = 0

    def __post_init__(self):
        if self.P < 2 or self.K < 2:
            raise ValueError(f"P and K must both be >= 2 (got P={self.P}, K={self.K})")

    @property
    def batch_size(self) -> int:
        return self.P * self.K


class PKSampler:
    """Emit batches of ``P`` distinct identities with ``K`` samples each.

    Within an epoch identities are visited in shuffled passes: a pass of
    ``ceil(T/P)`` batches covers every identity at least once, the last
    batch of a pass being topped up with identities drawn from the rest.
    Identities with fewer than ``K`` samples contribute all of them once and
    are topped up with replacement.  Batch ``(epoch, j)`` depends only on
    ``(seed, epoch, j)``.
    """

    def __init__(self, labels: Sequence[int], cfg: SamplerConfig):
        labels = np.asarray(labels, dtype=np.int64)
        self.cfg = cfg
        self.ids = np.unique(labels)
        if len(self.ids) < cfg.P:
            raise ValueError(f"manifest has {len(self.ids)} identities, fewer than P={cfg.P}")
        self.members = {int(y): np.flatnonzero(labels == y) for y in self.ids}
        self.num_samples = len(labels)
        self.pass_length = math.ceil(len(self.ids) / cfg.P)
        self._cursor = 0

    @property
    def batches_per_epoch(self) -> int:
        return max(1, self.num_samples // self.cfg.batch_size)

    def _identities(self, epoch: int, j: int) -> np.ndarray:
        P = self.cfg.P
        cycle, slot = divmod(j, self.pass_length)
        order = np.random.default_rng([self.cfg.seed, epoch, cycle, 0]).permutation(self.ids)
        chosen = order[slot * P:(slot + 1) * P]
        if len(chosen) < P:
            rest = np.setdiff1d(self.ids, chosen)
            extra = np.random.default_rng([self.cfg.seed, epoch, j, 1]).choice(rest, P - len(chosen), replace=False)
            chosen = np.concatenate([chosen, extra])
        return chosen

    def batch(self, epoch: int, j: int) -> np.ndarray:
        """Sample indices of batch ``j`` in ``epoch``, grouped by identity."""
        K = self.cfg.K
        rng = np.random.default_rng([self.cfg.seed, epoch, j, 2])
        out = []
        for y in self._identities(epoch, j):
            pool = self.members[int(y)]
            if len(pool) >= K:
                picks = rng.choice(pool, K, replace=False)
            else:
                picks = np.concatenate([pool, rng.choice(pool, K - len(pool), replace=True)])
                rng.shuffle(picks)
            out.append(picks)
        return np.concatenate(out)

    def epoch(self, epoch: int) -> Iterator[np.ndarray]:
        for j in range(self.batches_per_epoch):
            yield self.batch(epoch, j)

    def next_batch(self) -> np.ndarray:
        """Advance through the endless epoch-by-epoch batch sequence."""
        epoch, j = divmod(self._cursor, self.batches_per_epoch)
        self._cursor += 1
        return self.batch(epoch, j)
