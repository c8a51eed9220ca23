"""Piecewise learning-rate schedule and SGD with momentum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# (first epoch, last epoch, lr at first, lr at last); epochs are 1-based and inclusive
DEFAULT_PHASES = (
    (1, 10, 1e-3, 1e-2),
    (11, 39, 1e-2, 1e-2),
    (40, 69, 1e-3, 1e-3),
    (70, 120, 1e-4, 1e-4),
)


@dataclass(frozen=True)
class TrainSchedule:
    phases: tuple[tuple[int, int, float, float], ...] = DEFAULT_PHASES
    multiplier: float = 1.0
    momentum: float = 0.9
    weight_decay: float = 0.0

    def __post_init__(self):
        expect = 1
        for first, last, lr0, lr1 in self.phases:
            if first != expect or last < first:
                raise ValueError(f"schedule phases must tile the epochs contiguously from 1; bad phase {first}-{last}")
            if lr0 <= 0 or lr1 <= 0:
                raise ValueError("learning rates must be positive")
            expect = last + 1
        if self.multiplier <= 0:
            raise ValueError("LR multiplier must be positive")

    @property
    def epochs(self) -> int:
        return self.phases[-1][1]

    def lr(self, epoch: int) -> float:
        for first, last, lr0, lr1 in self.phases:
            if first <= epoch <= last:
                t = 0.0 if last == first else (epoch - first) / (last - first)
                return self.multiplier * (lr0 + t * (lr1 - lr0))
        raise ValueError(f"epoch {epoch} outside the schedule (1..{self.epochs})")

    def compressed(self, epochs: int) -> "TrainSchedule":
        """Same phase shape stretched or squeezed onto ``epochs`` epochs."""
        total = self.epochs
        if epochs < len(self.phases):
            raise ValueError(f"need at least {len(self.phases)} epochs to keep every phase")
        bounds = [0]
        for _, last, _, _ in self.phases:
            bounds.append(max(bounds[-1] + 1, round(last * epochs / total)))
        bounds[-1] = epochs
        for i in range(len(bounds) - 2, 0, -1):
            bounds[i] = min(bounds[i], bounds[i + 1] - 1)
        phases = tuple((bounds[i] + 1, bounds[i + 1], p[2], p[3]) for i, p in enumerate(self.phases))
        return TrainSchedule(phases, self.multiplier, self.momentum, self.weight_decay)


class SGD:
    def __init__(self, params: dict[str, np.ndarray], momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        for name, g in grads.items():
            p = self.params[name]
            if self.weight_decay:
                g = g + self.weight_decay * p
            v = self.velocity[name]
            v *= self.momentum
            v += g
            p -= lr * v
