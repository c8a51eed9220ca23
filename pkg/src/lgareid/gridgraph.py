"""Neighbourhood graph over the spatial positions of a feature map.

Nodes are the ``w*h`` cells of the map in row-major order (``row*w + col``).
Two nodes are connected when their Euclidean distance on the lattice is
strictly below the radius; every node also carries a self-loop, so the
stored adjacency is that of ``A + I``.  Edge weights are the symmetric
normalisation ``1 / (sqrt(deg(i)) * sqrt(deg(j)))``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import IO, Iterator

import numpy as np

DEFAULT_RADIUS = 1.5


@dataclass(frozen=True)
class NodeCoord:
    row: int
    col: int

    def index(self, width: int) -> int:
        return self.row * width + self.col


@dataclass(frozen=True, eq=False)
class GridGraph:
    """Immutable lattice graph with precomputed propagation weights.

    ``neighbors`` and ``weights`` are ``(k, m)`` tables padded to the
    largest degree ``m``; row ``i`` lists the neighbours of ``i`` (self
    included) in ascending index order, followed by padding slots that
    point at node 0 with weight 0.
    """

    width: int
    height: int
    radius: float
    neighbors: np.ndarray
    weights: np.ndarray
    degrees: np.ndarray

    @property
    def num_nodes(self) -> int:
        return self.width * self.height

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def coord(self, i: int) -> NodeCoord:
        self._check_index(i)
        return NodeCoord(*divmod(int(i), self.width))

    def index(self, row: int, col: int) -> int:
        if not (0 <= row < self.height and 0 <= col < self.width):
            raise ValueError(f"coordinate ({row}, {col}) outside {self.height}x{self.width} grid")
        return row * self.width + col

    def adjacency(self, i: int) -> list[tuple[int, float]]:
        """Sorted ``(j, weight)`` pairs for node ``i``, self-loop included."""
        self._check_index(i)
        d = int(self.degrees[i])
        return [(int(j), float(w)) for j, w in zip(self.neighbors[i, :d], self.weights[i, :d])]

    def edges(self) -> Iterator[tuple[int, int, float]]:
        for i in range(self.num_nodes):
            for j, w in self.adjacency(i):
                yield i, j, w

    def dense_weights(self) -> np.ndarray:
        """The ``k x k`` normalised matrix; O(k^2) memory, for oracles and benchmarks."""
        k = self.num_nodes
        dense = np.zeros((k, k))
        for i in range(k):
            d = int(self.degrees[i])
            dense[i, self.neighbors[i, :d]] = self.weights[i, :d]
        return dense

    def dump_edges(self, fh: IO[str]) -> None:
        """Write ``i j weight`` lines sorted by ``(i, j)`` with 17 significant digits."""
        for i, j, w in self.edges():
            fh.write(f"{i} {j} {w:.17g}\n")

    def _check_index(self, i: int) -> None:
        if not 0 <= i < self.num_nodes:
            raise ValueError(f"node index {i} out of range [0, {self.num_nodes})")


def _neighbor_offsets(radius: float) -> list[tuple[int, int]]:
    reach = int(math.ceil(radius))
    return [
        (dr, dc)
        for dr in range(-reach, reach + 1)
        for dc in range(-reach, reach + 1)
        if math.sqrt(dr * dr + dc * dc) < radius or (dr == 0 and dc == 0)
    ]


def build_grid_graph(width: int, height: int, radius: float = DEFAULT_RADIUS) -> GridGraph:
    """Build the radius graph on a ``height x width`` lattice.

    Raises ``ValueError`` for non-positive dimensions or radius.  A radius
    large enough to connect every pair of nodes is allowed.
    """
    if int(width) != width or int(height) != height or width < 1 or height < 1:
        raise ValueError(f"grid dimensions must be positive integers, got {width}x{height}")
    if not radius > 0 or not math.isfinite(radius):
        raise ValueError(f"radius must be a positive finite number, got {radius}")
    width, height, radius = int(width), int(height), float(radius)

    # row-major offset order already yields ascending neighbour indices
    offsets = _neighbor_offsets(radius)
    lists: list[list[int]] = []
    for row in range(height):
        for col in range(width):
            lists.append([
                (row + dr) * width + (col + dc)
                for dr, dc in offsets
                if 0 <= row + dr < height and 0 <= col + dc < width
            ])

    k = width * height
    degrees = np.array([len(nbrs) for nbrs in lists], dtype=np.int64)
    m = int(degrees.max())
    neighbors = np.zeros((k, m), dtype=np.int64)
    weights = np.zeros((k, m))
    root = np.sqrt(degrees.astype(np.float64))
    for i, nbrs in enumerate(lists):
        neighbors[i, : len(nbrs)] = nbrs
        # IEEE multiplication commutes, so weight(i,j) == weight(j,i) bitwise
        weights[i, : len(nbrs)] = 1.0 / (root[i] * root[nbrs])

    for arr in (neighbors, weights, degrees):
        arr.flags.writeable = False
    return GridGraph(width, height, radius, neighbors, weights, degrees)


def graph_distance(g: GridGraph, i: int, j: int) -> int:
    """Hop count of the shortest path from ``i`` to ``j`` (self-loops ignored)."""
    g._check_index(i)
    g._check_index(j)
    if i == j:
        return 0
    dist = {i: 0}
    queue = deque([i])
    while queue:
        u = queue.popleft()
        for v, _ in g.adjacency(u):
            if v not in dist:
                if v == j:
                    return dist[u] + 1
                dist[v] = dist[u] + 1
                queue.append(v)
    raise ValueError(f"no path between nodes {i} and {j} (radius {g.radius} < 1)")


def distances_from(g: GridGraph, source: int) -> np.ndarray:
    """Hop counts from ``source`` to every node; ``-1`` marks unreachable nodes."""
    g._check_index(source)
    dist = np.full(g.num_nodes, -1, dtype=np.int64)
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in g.neighbors[u, : g.degrees[u]]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(int(v))
    return dist
