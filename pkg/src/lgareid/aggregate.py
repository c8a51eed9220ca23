"""Parameter-free local graph aggregation (LGA) and its baselines.

Feature maps are numpy arrays whose two trailing axes are ``(height,
width)`` and must match the graph; any leading axes (channels, batch) are
carried through untouched.  Propagation is a sparse gather over the padded
neighbour table of :class:`~lgareid.gridgraph.GridGraph`, accumulated in
ascending neighbour order so results do not depend on how the leading axes
are split up.
"""

from __future__ import annotations

import numpy as np

from lgareid.gridgraph import GridGraph

AGGREGATIONS = ("lga", "lap", "none")


def _flatten(x: np.ndarray, g: GridGraph) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim < 2 or x.shape[-2:] != g.shape:
        raise ValueError(f"feature map spatial shape {x.shape[-2:]} does not match graph {g.shape}")
    return x.reshape(*x.shape[:-2], g.num_nodes)


def _gather(xf: np.ndarray, neighbors: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # node-major layout so each neighbour slot is a contiguous row gather
    k = xf.shape[-1]
    dtype = np.result_type(xf, weights)
    xt = np.ascontiguousarray(xf.reshape(-1, k).T, dtype=dtype)
    out = np.zeros_like(xt)
    tmp = np.empty_like(xt)
    for slot in range(neighbors.shape[1]):
        np.take(xt, neighbors[:, slot], axis=0, out=tmp)
        tmp *= weights[:, slot, None]
        out += tmp
    return out.T.reshape(xf.shape)


def propagate(x: np.ndarray, g: GridGraph) -> np.ndarray:
    """``D^-1/2 (A+I) D^-1/2 x`` without the nonlinearity."""
    xf = _flatten(x, g)
    return _gather(xf, g.neighbors, g.weights).reshape(x.shape)


def lga_forward(x: np.ndarray, g: GridGraph) -> np.ndarray:
    return np.maximum(propagate(x, g), 0.0)


def lga_backward(x: np.ndarray, g: GridGraph, upstream: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """Gradient of ``lga_forward`` w.r.t. its input.

    The ReLU derivative at exactly zero is taken as 0.  The propagation
    matrix is symmetric, so its transpose is applied with the same gather.
    ``out`` is the cached forward result; it is recomputed when omitted.
    """
    x = np.asarray(x)
    upstream = np.asarray(upstream)
    if upstream.shape != x.shape:
        raise ValueError(f"upstream gradient shape {upstream.shape} != input shape {x.shape}")
    mask = (lga_forward(x, g) if out is None else out) > 0
    return propagate(np.where(mask, upstream, 0.0), g)


def lga_cascade(x: np.ndarray, g: GridGraph, depth: int = 2) -> np.ndarray:
    if depth < 1:
        raise ValueError(f"cascade depth must be >= 1, got {depth}; disable aggregation instead")
    for _ in range(depth):
        x = lga_forward(x, g)
    return x


def _lap_tables(g: GridGraph) -> tuple[np.ndarray, np.ndarray]:
    deg = g.degrees.astype(np.float64)
    valid = np.arange(g.neighbors.shape[1]) < g.degrees[:, None]
    forward = np.where(valid, 1.0 / deg[:, None], 0.0)
    # transpose of the row-normalised matrix: entry (j, i) = 1/deg(i) for i in N(j)
    transpose = np.where(valid, 1.0 / deg[g.neighbors], 0.0)
    return forward, transpose


def lap_forward(x: np.ndarray, g: GridGraph, relu: bool = False) -> np.ndarray:
    """Uniform mean over each node's closed neighbourhood."""
    xf = _flatten(x, g)
    fwd, _ = _lap_tables(g)
    out = _gather(xf, g.neighbors, fwd).reshape(np.shape(x))
    return np.maximum(out, 0.0) if relu else out


def lap_backward(x: np.ndarray, g: GridGraph, upstream: np.ndarray, relu: bool = False) -> np.ndarray:
    upstream = np.asarray(upstream)
    if upstream.shape != np.shape(x):
        raise ValueError(f"upstream gradient shape {upstream.shape} != input shape {np.shape(x)}")
    if relu:
        upstream = np.where(lap_forward(x, g) > 0, upstream, 0.0)
    _, tr = _lap_tables(g)
    return _gather(_flatten(upstream, g), g.neighbors, tr).reshape(upstream.shape)


def global_average_pool(x: np.ndarray) -> np.ndarray:
    """Mean over the two trailing (spatial) axes."""
    x = np.asarray(x)
    return x.reshape(*x.shape[:-2], -1).mean(axis=-1)


def global_average_pool_backward(upstream: np.ndarray, spatial: tuple[int, int]) -> np.ndarray:
    h, w = spatial
    upstream = np.asarray(upstream)
    return np.broadcast_to(upstream[..., None, None] / (h * w), (*upstream.shape, h, w)).copy()


class Aggregator:
    """Cascade of LGA or LAP layers with cached intermediates for backprop.

    ``kind="none"`` is the identity and is how the no-aggregation baseline is
    expressed.  The module never owns trainable parameters.
    """

    def __init__(self, graph: GridGraph, kind: str = "lga", depth: int = 2, lap_relu: bool = False):
        if kind not in AGGREGATIONS:
            raise ValueError(f"unknown aggregation {kind!r}; expected one of {AGGREGATIONS}")
        if kind != "none" and depth < 1:
            raise ValueError(f"cascade depth must be >= 1, got {depth}")
        self.graph = graph
        self.kind = kind
        self.depth = depth
        self.lap_relu = lap_relu
        self._inputs: list[np.ndarray] = []
        self._outputs: list[np.ndarray] = []

    def parameters(self) -> list[np.ndarray]:
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        _flatten(x, self.graph)
        self._inputs, self._outputs = [], []
        if self.kind == "none":
            return x
        for _ in range(self.depth):
            self._inputs.append(x)
            x = lga_forward(x, self.graph) if self.kind == "lga" else lap_forward(x, self.graph, self.lap_relu)
            self._outputs.append(x)
        return x

    __call__ = forward

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        if self.kind == "none":
            return upstream
        for x, out in zip(reversed(self._inputs), reversed(self._outputs)):
            if self.kind == "lga":
                upstream = lga_backward(x, self.graph, upstream, out)
            else:
                upstream = lap_backward(x, self.graph, upstream, self.lap_relu)
        return upstream
