"""Cosine-distance retrieval, AP/mAP/CMC and the benchmark split protocols."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

FIXED = "fixed-split"
GALLERY_PER_ID = "random-gallery-per-id"
PROBE_PER_ID = "random-probe-per-id"
KINDS = (FIXED, GALLERY_PER_ID, PROBE_PER_ID)

REPORT_HEADER = ("protocol", "trial", "map", "cmc1", "cmc5", "skipped")


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class EvalProtocol:
    name: str
    kind: str
    same_camera_discard: bool = False
    trials: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown protocol kind {self.kind!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.kind == FIXED and self.trials != 1:
            raise ValueError("fixed-split protocols run exactly one trial")


def make_protocol(name: str, trials: int | None = None, seed: int = 0) -> EvalProtocol:
    """Named presets: ``veri``, ``vehicleid``, ``veriwild`` and plain ``fixed``."""
    presets = {
        "veri": (FIXED, True, 1),
        "fixed": (FIXED, False, 1),
        "vehicleid": (GALLERY_PER_ID, False, 5),
        "veriwild": (PROBE_PER_ID, False, 1),
    }
    if name not in presets:
        raise ValueError(f"unknown protocol {name!r}; expected one of {sorted(presets)}")
    kind, discard, default_trials = presets[name]
    if kind == FIXED:
        trials = 1
    return EvalProtocol(name, kind, discard, trials or default_trials, seed)


@dataclass(frozen=True)
class RankedList:
    """Gallery ordering for one query after filtering.

    ``order`` holds gallery indices (into the unfiltered gallery) sorted by
    ascending distance; ``relevant[r]`` is the ground-truth bit at rank ``r+1``.
    """

    query: int
    order: np.ndarray
    distances: np.ndarray
    relevant: np.ndarray

    @property
    def num_relevant(self) -> int:
        return int(self.relevant.sum())


def _unit_rows(x: np.ndarray, what: str) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if not np.isfinite(x).all():
        raise ValueError(f"{what} contains non-finite values")
    norms = np.linalg.norm(x, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(f"{what} item {int(zero[0])} has zero norm; cosine distance undefined")
    return x / norms[:, None]


def cosine_distances(queries: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    return 1.0 - _unit_rows(queries, "query") @ _unit_rows(gallery, "gallery").T


def cosine_rank(query: np.ndarray, gallery: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gallery indices by ascending cosine distance (ties by index) and the sorted distances."""
    dist = cosine_distances(query, gallery)[0]
    order = np.argsort(dist, kind="stable")
    return order, dist[order]


def rank_queries(q_emb, q_ids, q_cams, g_emb, g_ids, g_cams, same_camera_discard: bool = False
                 ) -> list[RankedList]:
    """One :class:`RankedList` per query.

    With ``same_camera_discard`` every gallery item sharing the query's
    camera is removed before ranking, whatever its identity.
    """
    q_ids, q_cams = np.asarray(q_ids), np.asarray(q_cams)
    g_ids, g_cams = np.asarray(g_ids), np.asarray(g_cams)
    dist = cosine_distances(q_emb, g_emb)
    out = []
    for q in range(dist.shape[0]):
        order = np.argsort(dist[q], kind="stable")
        if same_camera_discard:
            order = order[g_cams[order] != q_cams[q]]
        out.append(RankedList(q, order, dist[q, order], g_ids[order] == q_ids[q]))
    return out


def average_precision(rl: RankedList) -> float:
    """Sum of precision at each relevant rank over the full list, divided by ``N_gt``."""
    n_gt = rl.num_relevant
    if n_gt == 0:
        raise ProtocolError(f"query {rl.query} has no relevant gallery item")
    # exact rational sum, rounded once, so results do not depend on summation order
    ranks = np.flatnonzero(rl.relevant) + 1
    return float(sum(Fraction(h, int(r)) for h, r in enumerate(ranks, start=1)) / n_gt)


def _scored(lists: Sequence[RankedList]) -> list[RankedList]:
    kept = [rl for rl in lists if rl.num_relevant > 0]
    if not kept:
        raise ProtocolError("every query was skipped (no relevant gallery items)")
    return kept


def skipped_count(lists: Sequence[RankedList]) -> int:
    return sum(1 for rl in lists if rl.num_relevant == 0)


def mean_ap(lists: Sequence[RankedList]) -> float:
    kept = _scored(lists)
    return float(sum(average_precision(rl) for rl in kept) / len(kept))


def cmc(lists: Sequence[RankedList], alpha: int = 1) -> float:
    """Fraction of unskipped queries whose first relevant item has rank <= alpha."""
    if alpha < 1:
        raise ValueError("CMC rank must be >= 1")
    kept = _scored(lists)
    return float(sum(bool(rl.relevant[:alpha].any()) for rl in kept) / len(kept))


def cmc_curve(lists: Sequence[RankedList], max_rank: int) -> np.ndarray:
    return np.array([cmc(lists, a) for a in range(1, max_rank + 1)])


@dataclass(frozen=True)
class Split:
    probe: np.ndarray
    gallery: np.ndarray
    excluded_ids: tuple[int, ...] = ()


def build_protocol_splits(ids, splits, proto: EvalProtocol, trial: int = 0) -> Split:
    """Probe/gallery indices into the manifest for one trial.

    ``splits`` holds each record's tag.  The fixed kind copies the
    ``probe``/``gallery`` tags; the random kinds redraw from every record not
    tagged ``train``, excluding identities with a single test sample.
    """
    ids = np.asarray(ids)
    splits = np.asarray(splits, dtype=object)
    if proto.kind == FIXED:
        return Split(np.flatnonzero(splits == "probe"), np.flatnonzero(splits == "gallery"))

    pool = np.flatnonzero(splits != "train")
    rng = np.random.default_rng([proto.seed, trial])
    probe, gallery, excluded = [], [], []
    for y in np.unique(ids[pool]):
        members = pool[ids[pool] == y]
        if len(members) < 2:
            excluded.append(int(y))
            continue
        pick = members[rng.integers(len(members))]
        rest = members[members != pick]
        if proto.kind == GALLERY_PER_ID:
            gallery.append([pick])
            probe.append(rest)
        else:
            probe.append([pick])
            gallery.append(rest)
    if not probe:
        raise ProtocolError("no identity has enough test samples for a random split")
    return Split(np.sort(np.concatenate(probe)), np.sort(np.concatenate(gallery)), tuple(excluded))


@dataclass
class TrialResult:
    trial: int
    map: float
    cmc1: float
    cmc5: float
    skipped: int
    excluded_ids: tuple[int, ...] = ()


@dataclass
class Report:
    protocol: str
    trials: list[TrialResult] = field(default_factory=list)

    @property
    def map(self) -> float:
        return float(np.mean([t.map for t in self.trials]))

    @property
    def cmc1(self) -> float:
        return float(np.mean([t.cmc1 for t in self.trials]))

    @property
    def cmc5(self) -> float:
        return float(np.mean([t.cmc5 for t in self.trials]))

    @property
    def skipped(self) -> float:
        return float(np.mean([t.skipped for t in self.trials]))

    def rows(self) -> list[tuple]:
        rows = [(self.protocol, t.trial, t.map, t.cmc1, t.cmc5, t.skipped) for t in self.trials]
        rows.append((self.protocol, "mean", self.map, self.cmc1, self.cmc5, self.skipped))
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        for row in self.rows():
            writer.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in row])
        return buf.getvalue()


def evaluate(embeddings, ids, cams, splits, proto: EvalProtocol) -> Report:
    """Run ``proto.trials`` splits, rank every probe, and average the metrics."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    ids, cams = np.asarray(ids), np.asarray(cams)
    report = Report(proto.name)
    for trial in range(proto.trials):
        split = build_protocol_splits(ids, splits, proto, trial)
        p, g = split.probe, split.gallery
        lists = rank_queries(embeddings[p], ids[p], cams[p], embeddings[g], ids[g], cams[g],
                             proto.same_camera_discard)
        report.trials.append(TrialResult(trial, mean_ap(lists), cmc(lists, 1), cmc(lists, 5),
                                         skipped_count(lists), split.excluded_ids))
    return report
