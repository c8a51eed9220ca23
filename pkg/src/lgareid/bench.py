"""Timing of the sparse LGA cascade against the dense-matrix oracle."""

from __future__ import annotations

import csv
import io
import timeit
from dataclasses import dataclass

import numpy as np

from lgareid.aggregate import lga_cascade
from lgareid.gridgraph import DEFAULT_RADIUS, build_grid_graph

GRIDS = (8, 20, 40, 80)
DEPTHS = (1, 2, 3, 4, 5)
CSV_HEADER = ("grid", "depth", "impl", "ns_per_map")


@dataclass(frozen=True)
class BenchRow:
    grid: int
    depth: int
    impl: str
    ns_per_map: float


def dense_cascade(x: np.ndarray, dense: np.ndarray, depth: int) -> np.ndarray:
    flat = x.reshape(*x.shape[:-2], -1)
    for _ in range(depth):
        flat = np.maximum(flat @ dense.T, 0.0)
    return flat.reshape(x.shape)


def _ns_per_call(fn, min_time: float) -> float:
    timer = timeit.Timer(fn)
    number, total = timer.autorange()
    while total < min_time:
        number *= 2
        total = timer.timeit(number)
    return total / number * 1e9


def run_bench(grids=GRIDS, depths=DEPTHS, channels: int = 32, seed: int = 0, min_time: float = 0.05,
              radius: float = DEFAULT_RADIUS) -> list[BenchRow]:
    """Rows ordered by grid, then depth, then ``sparse`` before ``dense``."""
    rng = np.random.default_rng(seed)
    rows = []
    for n in grids:
        g = build_grid_graph(n, n, radius)
        dense = g.dense_weights()
        x = rng.normal(size=(channels, n, n))
        for d in depths:
            rows.append(BenchRow(n, d, "sparse", _ns_per_call(lambda: lga_cascade(x, g, d), min_time)))
            rows.append(BenchRow(n, d, "dense", _ns_per_call(lambda: dense_cascade(x, dense, d), min_time)))
    return rows


def bench_csv(rows: list[BenchRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r.grid, r.depth, r.impl, f"{r.ns_per_map:.0f}"])
    return buf.getvalue()


def speedups(rows: list[BenchRow]) -> dict[tuple[int, int], float]:
    """Dense time over sparse time per ``(grid, depth)``."""
    t = {(r.grid, r.depth, r.impl): r.ns_per_map for r in rows}
    return {(g, d): t[g, d, "dense"] / t[g, d, "sparse"] for g, d, impl in t if impl == "sparse"}
