"""Ablation runs on one dataset, scored overall and on the rarest identities."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass

import numpy as np

from lgareid.evalproto import EvalProtocol, build_protocol_splits, evaluate, rank_queries
from lgareid.losses import ClassFrequencyTable
from lgareid.pipeline import ModelConfig, TrainSchedule, apply_ablation, train
from lgareid.sampler import SamplerConfig

CSV_HEADER = ("ablation", "beta", "map", "cmc1", "cmc5", "rare_cmc1", "seconds")


def rarest_ids(counts, fraction: float = 0.1) -> np.ndarray:
    """Identities whose count is at most that of the ``ceil(fraction*T)``-th rarest.

    Ties at the boundary are all included so the set does not depend on
    label order.
    """
    counts = np.asarray(counts)
    k = max(1, math.ceil(fraction * len(counts)))
    cutoff = np.sort(counts, kind="stable")[k - 1]
    return np.flatnonzero(counts <= cutoff)


def rare_cmc1(embeddings, ids, cams, splits, proto: EvalProtocol, rare) -> float:
    """CMC@1 averaged per identity over ``rare`` (macro), then over trials."""
    embeddings, ids, cams = np.asarray(embeddings), np.asarray(ids), np.asarray(cams)
    per_trial = []
    for trial in range(proto.trials):
        sp = build_protocol_splits(ids, splits, proto, trial)
        p, g = sp.probe, sp.gallery
        lists = rank_queries(embeddings[p], ids[p], cams[p], embeddings[g], ids[g], cams[g],
                             proto.same_camera_discard)
        hits: dict[int, list[bool]] = {}
        for rl, q in zip(lists, p):
            if rl.num_relevant:
                hits.setdefault(int(ids[q]), []).append(bool(rl.relevant[0]))
        scores = [np.mean(hits[y]) for y in rare if y in hits]
        if scores:
            per_trial.append(np.mean(scores))
    if not per_trial:
        raise ValueError("no rare identity has a scorable query")
    return float(np.mean(per_trial))


@dataclass(frozen=True)
class StudyRow:
    ablation: str
    beta: float
    map: float
    cmc1: float
    cmc5: float
    rare_cmc1: float
    seconds: float


def run_study(feats, labels, cams, splits, ablations, base: ModelConfig, beta: float, epochs: int,
              proto: EvalProtocol, seed: int = 0, sampler: SamplerConfig | None = None,
              schedule: TrainSchedule | None = None, overrides: dict | None = None) -> list[StudyRow]:
    """Train each ablation from the same seed on the ``train`` split and evaluate.

    ``overrides`` maps an ablation name to extra :class:`ModelConfig` changes
    (for instance a different cascade depth).
    """
    labels, splits = np.asarray(labels), np.asarray(splits, dtype=object)
    tr = np.flatnonzero(splits == "train")
    counts = np.bincount(labels[tr], minlength=base.num_classes)
    rare = rarest_ids(counts)
    schedule = schedule or TrainSchedule()
    if epochs != schedule.epochs:
        schedule = schedule.compressed(epochs)
    sampler = sampler or SamplerConfig(seed=seed)
    rows = []
    for name in ablations:
        cfg, b = apply_ablation(name, base, beta)
        if overrides and name in overrides:
            cfg = cfg.evolve(**overrides[name])
        t0 = time.perf_counter()
        res = train(feats[tr], labels[tr], cfg, schedule, sampler, ClassFrequencyTable(counts, b), seed=seed,
                    epochs=epochs)
        emb = res.model.embed(feats)
        rep = evaluate(emb, labels, cams, splits, proto)
        rows.append(StudyRow(name, b, rep.map, rep.cmc1, rep.cmc5, rare_cmc1(emb, labels, cams, splits, proto, rare),
                             time.perf_counter() - t0))
    return rows


def study_csv(rows: list[StudyRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r.ablation, f"{r.beta:g}", f"{r.map:.6f}", f"{r.cmc1:.6f}", f"{r.cmc5:.6f}",
                    f"{r.rare_cmc1:.6f}", f"{r.seconds:.1f}"])
    return buf.getvalue()
