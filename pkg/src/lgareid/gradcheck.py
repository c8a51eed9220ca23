"""Analytic-vs-central-difference gradient checks.

Every check draws random instances, skips draws where the finite difference
would straddle a ReLU kink or flip a batch-hard selection, and reports the
worst relative error ``max|a - n| / max(|a|max, |n|max)`` over the accepted
instances.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable

import numpy as np

from lgareid.aggregate import Aggregator, propagate
from lgareid.gridgraph import build_grid_graph
from lgareid.losses import (ClassFrequencyTable, class_balanced_loss, mine_batch_hard, pairwise_sq_dists,
                           softmargin_triplet_loss)
from lgareid.pipeline.model import Model, ModelConfig

THRESHOLD = 1e-4
STEP = 1e-6
# denominators below this are treated as an exactly-zero gradient
ZERO_FLOOR = 1e-8
CSV_HEADER = ("check", "max_rel_err", "threshold", "instances", "status")


class Unstable(Exception):
    """The draw sits too close to a non-differentiable point."""


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), ZERO_FLOOR)
    return float(np.abs(analytic - numeric).max() / scale)


def central_difference(f: Callable[[], float], arr: np.ndarray, h: float = STEP) -> np.ndarray:
    """Perturb ``arr`` in place entry by entry; ``f`` reads it through closure."""
    out = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + h
        fp = f()
        arr[idx] = old - h
        fm = f()
        arr[idx] = old
        out[idx] = (fp - fm) / (2 * h)
    return out


def _pk_labels(rng, max_p=4, max_k=3):
    P, K = int(rng.integers(2, max_p + 1)), int(rng.integers(2, max_k + 1))
    return np.repeat(np.arange(P), K)


def _stable_selection(selection: Callable[[], tuple], base: tuple) -> Callable[[], None]:
    def check():
        now = selection()
        if not all(np.array_equal(a, b) for a, b in zip(now, base)):
            raise Unstable("batch-hard selection changed under perturbation")
    return check


def check_lga(rng: np.random.Generator) -> float:
    c, h, w = (int(v) for v in rng.integers(1, [5, 6, 6], endpoint=True))
    g = build_grid_graph(w, h, float(rng.choice([1.0, 1.5, 2.5])))
    agg = Aggregator(g, "lga", int(rng.integers(1, 4)))
    x = rng.normal(size=(2, c, h, w))
    up = rng.normal(size=x.shape)
    agg.forward(x)
    for inp in agg._inputs:
        if np.abs(propagate(inp, g)).min() < 1e3 * STEP:
            raise Unstable("pre-activation near the ReLU kink")
    analytic = agg.backward(up)
    numeric = central_difference(lambda: float((Aggregator(g, "lga", agg.depth).forward(x) * up).sum()), x)
    return rel_err(analytic, numeric)


def check_cb_loss(rng: np.random.Generator) -> float:
    B, T = int(rng.integers(1, 9)), int(rng.integers(2, 8))
    freq = ClassFrequencyTable(rng.integers(1, 100, T), float(rng.uniform(0, 0.999)))
    z = rng.normal(0, 2, (B, T))
    y = rng.integers(0, T, B)
    _, analytic = class_balanced_loss(z, y, freq)
    numeric = central_difference(lambda: class_balanced_loss(z, y, freq)[0], z)
    return rel_err(analytic, numeric)


def check_triplet(rng: np.random.Generator) -> float:
    y = _pk_labels(rng)
    x = rng.normal(size=(len(y), int(rng.integers(1, 9))))
    m = float(rng.uniform(0, 1))
    _, analytic = softmargin_triplet_loss(x, y, m)
    selection = lambda: mine_batch_hard(pairwise_sq_dists(x), y)  # noqa: E731
    stable = _stable_selection(selection, selection())

    def f():
        stable()
        return softmargin_triplet_loss(x, y, m)[0]
    return rel_err(analytic, central_difference(f, x))


def check_end_to_end(rng: np.random.Generator) -> float:
    T = int(rng.integers(2, 6))
    cfg = ModelConfig(num_classes=T, channels=int(rng.integers(2, 9)), in_channels=int(rng.integers(2, 6)),
                      grid=tuple(int(v) for v in rng.integers(1, 5, 2)),
                      aggregation=str(rng.choice(["lga", "lap", "none"])), lga_depth=int(rng.integers(1, 3)))
    model = Model.create(cfg, int(rng.integers(2**31)))
    for p in model.params.values():
        p += rng.normal(0, 0.3, p.shape)
    K = int(rng.integers(2, 4))
    y = np.repeat(np.arange(T), K)
    x = rng.normal(size=(len(y), cfg.in_channels, *cfg.grid))
    freq = ClassFrequencyTable(rng.integers(1, 60, T), float(rng.uniform(0, 0.999)))

    def losses():
        out = model.forward(x, train=True, update_stats=False)
        cb, d_logits = class_balanced_loss(out.logits, y, freq)
        tri, d_pre = softmargin_triplet_loss(out.pre_bn, y)
        return out, cb + tri, d_logits, d_pre

    out, _, d_logits, d_pre = losses()
    if cfg.aggregation == "lga":
        for inp in model.aggregator._inputs:
            if np.abs(propagate(inp, model.aggregator.graph)).min() < 1e3 * STEP:
                raise Unstable("pre-activation near the ReLU kink")
    grads = model.backward(d_logits, d_pre)
    base = mine_batch_hard(pairwise_sq_dists(out.pre_bn), y)
    stable = _stable_selection(lambda: mine_batch_hard(pairwise_sq_dists(model.forward(x, True, False).pre_bn), y),
                               base)

    def f():
        stable()
        return losses()[1]
    # one error over the full parameter vector: some tensors (e.g. a bias ahead of a
    # linear path into BN) have an exactly zero gradient
    names = sorted(model.params)
    numeric = np.concatenate([central_difference(f, model.params[n]).ravel() for n in names])
    return rel_err(np.concatenate([grads[n].ravel() for n in names]), numeric)


REGISTRY: dict[str, Callable[[np.random.Generator], float]] = {
    "lga": check_lga,
    "cb_loss": check_cb_loss,
    "triplet": check_triplet,
    "end_to_end": check_end_to_end,
}


@dataclass(frozen=True)
class CheckResult:
    check: str
    max_rel_err: float
    threshold: float
    instances: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.threshold


def run_check(name: str, instances: int = 100, seed: int = 0, threshold: float = THRESHOLD,
              max_draws: int | None = None) -> CheckResult:
    fn = REGISTRY[name]
    rng = np.random.default_rng([seed, sorted(REGISTRY).index(name)])
    worst, accepted, draws = 0.0, 0, 0
    limit = max_draws or 20 * instances
    while accepted < instances:
        draws += 1
        if draws > limit:
            raise RuntimeError(f"{name}: only {accepted} stable instances in {limit} draws")
        try:
            worst = max(worst, fn(rng))
        except Unstable:
            continue
        accepted += 1
    return CheckResult(name, worst, threshold, accepted)


def run_all(instances: int = 100, seed: int = 0, names=None) -> list[CheckResult]:
    return [run_check(n, instances, seed) for n in (names or REGISTRY)]


def results_csv(results: list[CheckResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in results:
        w.writerow([r.check, f"{r.max_rel_err:.3e}", f"{r.threshold:.0e}", r.instances,
                    "pass" if r.passed else "FAIL"])
    return buf.getvalue()
