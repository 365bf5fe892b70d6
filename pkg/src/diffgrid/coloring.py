"""Independent vertex sets: parity coloring for grids, greedy for meshes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .complexes import GridTopology, SimplicialComplex


@dataclass
class VertexColoring:
    colors: np.ndarray            # (V,) int64
    color_count: int
    members: list[np.ndarray]     # per-color sorted vertex ids

    @classmethod
    def from_colors(cls, colors: np.ndarray) -> "VertexColoring":
        colors = np.asarray(colors, dtype=np.int64)
        count = int(colors.max()) + 1 if colors.size else 0
        members = [np.flatnonzero(colors == c) for c in range(count)]
        return cls(colors=colors, color_count=count, members=members)


def grid_parity_coloring(topology: GridTopology) -> VertexColoring:
    """2-coloring by lattice coordinate parity: color = sum(coords) mod 2."""
    coords = topology.all_coords()
    return VertexColoring.from_colors(coords.sum(axis=1) % 2)


def greedy_coloring(adjacency) -> VertexColoring:
    """Greedy coloring, decreasing degree order with index tie-break.

    ``adjacency`` is either a SimplicialComplex or a list of neighbor arrays.
    Uses at most max(degree)+1 colors.
    """
    if isinstance(adjacency, SimplicialComplex):
        offsets, indices = adjacency.adj_offsets, adjacency.adj_indices
        n = adjacency.vertex_count
    else:
        neighbor_lists = [np.asarray(a, dtype=np.int64) for a in adjacency]
        n = len(neighbor_lists)
        offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum([len(a) for a in neighbor_lists], out=offsets[1:])
        indices = np.concatenate(neighbor_lists) if n else np.empty(0, dtype=np.int64)

    degrees = np.diff(offsets)
    order = np.lexsort((np.arange(n), -degrees))
    colors = np.full(n, -1, dtype=np.int64)
    for v in order:
        taken = colors[indices[offsets[v]:offsets[v + 1]]]
        taken = set(taken[taken >= 0].tolist())
        c = 0
        while c in taken:
            c += 1
        colors[v] = c
    return VertexColoring.from_colors(colors)


def verify_independent(coloring: VertexColoring, adjacency) -> bool:
    """True iff no edge joins two vertices of the same color."""
    if isinstance(adjacency, SimplicialComplex):
        offsets, indices = adjacency.adj_offsets, adjacency.adj_indices
        n = adjacency.vertex_count
    else:
        neighbor_lists = [np.asarray(a, dtype=np.int64) for a in adjacency]
        n = len(neighbor_lists)
        offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum([len(a) for a in neighbor_lists], out=offsets[1:])
        indices = np.concatenate(neighbor_lists) if n else np.empty(0, dtype=np.int64)
    src = np.repeat(np.arange(n), np.diff(offsets))
    return not np.any(coloring.colors[src] == coloring.colors[indices])
