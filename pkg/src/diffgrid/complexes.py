"""Geometry substrate: lattice grids and triangle meshes with signed measures.

Grids of any dimension (2 or 3 supported here) and triangle meshes share one
representation: vertex positions, oriented simplices, optional lattice cells,
and a CSR adjacency. All geometry is double precision; single precision was
found too unstable for the inversion thresholds used downstream.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

# Strictness threshold for "positive measure" in normalized coordinates.
EPS_AREA = 1e-12

# Triangles covering a quad cell (both diagonals), CCW on the unit square,
# indices into the cell's (i,j),(i+1,j),(i+1,j+1),(i,j+1) corner cycle.
_QUAD_TRIS = np.array([(0, 1, 2), (0, 2, 3), (0, 1, 3), (1, 2, 3)], dtype=np.int64)

# Two mirror-image 5-tet decompositions of a cube (10 tets total), indices
# into the two-stacked-quads corner order. Each row has positive volume on
# the unit cube; per decomposition the volumes are {1/6 x4, 1/3} and sum to 1.
_CUBE_TETS = np.array(
    [
        (1, 0, 5, 2), (3, 0, 2, 7), (4, 0, 7, 5), (6, 2, 5, 7), (0, 2, 7, 5),
        (0, 1, 3, 4), (2, 1, 6, 3), (5, 1, 4, 6), (7, 3, 6, 4), (1, 3, 4, 6),
    ],
    dtype=np.int64,
)


class DegenerateProjectionError(ValueError):
    """A unit-circle vertex collapsed onto the origin."""


@dataclass
class SimplicialComplex:
    """Vertices plus oriented simplices; the substrate for grids and meshes.

    ``simplices`` are 3-tuples (triangles) in 2D and 4-tuples (tetrahedra)
    in 3D; for grids they are the barrier subdivision of the cells.
    Adjacency is stored CSR-style (``adj_offsets``/``adj_indices``) with a
    deterministic per-vertex neighbor order. Instances are treated as
    immutable after construction; optimizers carry their own position
    arrays and leave ``positions`` as the initial embedding.
    """

    dim: int
    positions: np.ndarray        # (V, dim) float64
    simplices: np.ndarray        # (S, dim+1) int64, oriented
    adj_offsets: np.ndarray      # (V+1,) int64
    adj_indices: np.ndarray      # (nnz,) int64
    cells: np.ndarray | None = None  # (C, 4) quads or (C, 8) cubes

    @property
    def vertex_count(self) -> int:
        return self.positions.shape[0]

    @property
    def edge_slot_count(self) -> int:
        """Number of directed neighbor slots (CSR entries)."""
        return self.adj_indices.shape[0]

    def neighbors(self, vertex: int) -> np.ndarray:
        return self.adj_indices[self.adj_offsets[vertex]:self.adj_offsets[vertex + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.adj_offsets)


@dataclass
class BoundaryConstraint:
    """Per-vertex boundary handling: pinned axes and unit-circle projection."""

    pinned_mask: np.ndarray      # (V, dim) bool, True where the axis is fixed
    pinned_values: np.ndarray    # (V, dim) float64, target value where pinned
    on_circle: np.ndarray        # (V,) bool

    @classmethod
    def free(cls, vertex_count: int, dim: int) -> "BoundaryConstraint":
        return cls(
            pinned_mask=np.zeros((vertex_count, dim), dtype=bool),
            pinned_values=np.zeros((vertex_count, dim)),
            on_circle=np.zeros(vertex_count, dtype=bool),
        )

    def fully_pinned(self) -> np.ndarray:
        """Vertices with every axis pinned (grid corners)."""
        return self.pinned_mask.all(axis=1)


@dataclass
class GridTopology:
    """Lattice bookkeeping: per-axis vertex counts and index maps.

    Vertex ids are lattice order with the x coordinate fastest:
    ``id = c[0] + res[0]*(c[1] + res[1]*c[2] + ...)``.
    """

    resolution: tuple[int, ...]
    _strides: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._strides = np.cumprod([1, *self.resolution[:-1]]).astype(np.int64)

    @property
    def dim(self) -> int:
        return len(self.resolution)

    @property
    def vertex_count(self) -> int:
        return int(np.prod(self.resolution))

    def vertex_index(self, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords, dtype=np.int64)
        return coords @ self._strides

    def vertex_coords(self, index) -> np.ndarray:
        index = np.asarray(index, dtype=np.int64)
        out = np.empty(index.shape + (self.dim,), dtype=np.int64)
        rem = index
        for axis, r in enumerate(self.resolution):
            out[..., axis] = rem % r
            rem = rem // r
        return out

    def all_coords(self) -> np.ndarray:
        return self.vertex_coords(np.arange(self.vertex_count))


def build_grid(resolution, dim: int | None = None):
    """Build a uniform grid on [-1, 1]^dim with pinned boundary axes.

    Returns ``(SimplicialComplex, GridTopology, BoundaryConstraint)``.
    Adjacency is the 2*dim lattice neighborhood; ``simplices`` holds the
    4-triangle (2D) or 10-tet (3D) subdivision of every cell.

    Raises ValueError for any axis resolution < 2 or unsupported dim.
    """
    resolution = tuple(int(r) for r in resolution)
    if dim is None:
        dim = len(resolution)
    if dim not in (2, 3) or len(resolution) != dim:
        raise ValueError(f"dim must be 2 or 3 and match resolution, got {dim} / {resolution}")
    if any(r < 2 for r in resolution):
        raise ValueError(f"every axis needs at least 2 vertices, got {resolution}")

    topo = GridTopology(resolution)
    coords = topo.all_coords()
    res = np.array(resolution, dtype=np.int64)
    positions = -1.0 + 2.0 * coords / (res - 1)

    # lattice adjacency, deterministic order: -x,+x,-y,+y,(-z,+z)
    nbr_lists = []
    for axis in range(dim):
        for step in (-1, +1):
            shifted = coords.copy()
            shifted[:, axis] += step
            valid = (shifted[:, axis] >= 0) & (shifted[:, axis] < resolution[axis])
            ids = np.full(topo.vertex_count, -1, dtype=np.int64)
            ids[valid] = topo.vertex_index(shifted[valid])
            nbr_lists.append(ids)
    nbr = np.stack(nbr_lists, axis=1)  # (V, 2*dim), -1 where absent
    mask = nbr >= 0
    degrees = mask.sum(axis=1)
    adj_offsets = np.zeros(topo.vertex_count + 1, dtype=np.int64)
    np.cumsum(degrees, out=adj_offsets[1:])
    adj_indices = nbr[mask]

    cells, simplices = _grid_cells_and_simplices(topo)

    pinned_mask = np.zeros((topo.vertex_count, dim), dtype=bool)
    pinned_values = np.zeros((topo.vertex_count, dim))
    for axis in range(dim):
        lo = coords[:, axis] == 0
        hi = coords[:, axis] == resolution[axis] - 1
        pinned_mask[lo | hi, axis] = True
        pinned_values[lo, axis] = -1.0
        pinned_values[hi, axis] = 1.0

    complex_ = SimplicialComplex(
        dim=dim,
        positions=positions,
        simplices=simplices,
        adj_offsets=adj_offsets,
        adj_indices=adj_indices,
        cells=cells,
    )
    constraint = BoundaryConstraint(
        pinned_mask=pinned_mask,
        pinned_values=pinned_values,
        on_circle=np.zeros(topo.vertex_count, dtype=bool),
    )
    return complex_, topo, constraint


def _grid_cells_and_simplices(topo: GridTopology):
    res = topo.resolution
    dim = topo.dim
    # cell anchors in lattice order, x fastest
    counts = [r - 1 for r in res]
    idx = np.arange(int(np.prod(counts)))
    anchors = np.empty((idx.size, dim), dtype=np.int64)
    rem = idx
    for axis, c in enumerate(counts):
        anchors[:, axis] = rem % c
        rem = rem // c

    if dim == 2:
        corner_offsets = np.array([(0, 0), (1, 0), (1, 1), (0, 1)], dtype=np.int64)
        local = _QUAD_TRIS
    else:
        corner_offsets = np.array(
            [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
             (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)],
            dtype=np.int64,
        )
        local = _CUBE_TETS
    corners = anchors[:, None, :] + corner_offsets[None, :, :]
    cells = topo.vertex_index(corners.reshape(-1, dim)).reshape(len(anchors), -1)
    simplices = cells[:, local].reshape(-1, local.shape[1])
    return cells, simplices


def signed_area(a, b, c) -> float:
    """Half the z-component of (b-a) x (c-a); positive for CCW."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    return 0.5 * float(
        (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    )


def signed_volume(v0, v1, v2, v3) -> float:
    """(1/6) (v1-v0) . ((v2-v0) x (v3-v0))."""
    v0 = np.asarray(v0, dtype=float)
    e1 = np.asarray(v1, dtype=float) - v0
    e2 = np.asarray(v2, dtype=float) - v0
    e3 = np.asarray(v3, dtype=float) - v0
    return float(np.dot(e1, np.cross(e2, e3))) / 6.0


def signed_measures(complex_: SimplicialComplex, positions: np.ndarray | None = None) -> np.ndarray:
    """Signed area (2D) or volume (3D) of every simplex, vectorized."""
    pos = complex_.positions if positions is None else positions
    tris = complex_.simplices
    if complex_.dim == 2:
        a, b, c = pos[tris[:, 0]], pos[tris[:, 1]], pos[tris[:, 2]]
        return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                      - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))
    v0 = pos[tris[:, 0]]
    e1 = pos[tris[:, 1]] - v0
    e2 = pos[tris[:, 2]] - v0
    e3 = pos[tris[:, 3]] - v0
    return np.einsum("ij,ij->i", e1, np.cross(e2, e3)) / 6.0


def subdivide_cell_2d(cell) -> np.ndarray:
    """Four oriented triangles covering a quad cell (two per diagonal).

    ``cell`` is the CCW corner cycle (i,j),(i+1,j),(i+1,j+1),(i,j+1);
    output order is fixed: both diagonal splits, CCW on the rest shape.
    """
    cell = np.asarray(cell, dtype=np.int64)
    if cell.shape != (4,):
        raise ValueError("quad cell needs exactly 4 vertex ids")
    return cell[_QUAD_TRIS]


def subdivide_cell_3d(cell) -> np.ndarray:
    """Ten oriented tetrahedra: both mirror 5-tet decompositions of a cube.

    ``cell`` is two stacked CCW quads (bottom then top face, lattice order).
    """
    cell = np.asarray(cell, dtype=np.int64)
    if cell.shape != (8,):
        raise ValueError("cube cell needs exactly 8 vertex ids")
    return cell[_CUBE_TETS]


def in_kernel(candidate, one_ring, closed: bool = True, eps: float = EPS_AREA) -> bool:
    """True iff every fan triangle (candidate, ring_k, ring_{k+1}) is CCW.

    ``one_ring`` must be CCW-ordered. For ``closed`` rings the cycle wraps
    and the test is exactly strict kernel membership of the ring polygon;
    open fans (boundary vertices) only test consecutive pairs. The fan
    orientation test is used instead of constructing the kernel polygon
    explicitly; the two agree on closed rings.
    """
    ring = np.asarray(one_ring, dtype=float)
    if ring.ndim != 2 or ring.shape[0] < 2:
        raise ValueError("one_ring needs at least 2 vertices")
    cand = np.asarray(candidate, dtype=float)
    if closed:
        nxt = np.roll(ring, -1, axis=0)
    else:
        nxt = ring[1:]
        ring = ring[:-1]
    areas = 0.5 * ((ring[:, 0] - cand[0]) * (nxt[:, 1] - cand[1])
                   - (ring[:, 1] - cand[1]) * (nxt[:, 0] - cand[0]))
    return bool(np.all(areas > eps))


def apply_boundary(positions: np.ndarray, constraints: BoundaryConstraint) -> np.ndarray:
    """Restore pinned axes and project unit-circle vertices; free vertices pass through."""
    out = positions.copy()
    m = constraints.pinned_mask
    out[m] = constraints.pinned_values[m]
    circ = constraints.on_circle
    if circ.any():
        p = out[circ]
        norms = np.linalg.norm(p, axis=1)
        if np.any(norms < 1e-300):
            raise DegenerateProjectionError("unit-circle vertex at the origin")
        out[circ] = p / norms[:, None]
    return out


def mesh_complex(positions: np.ndarray, triangles: np.ndarray) -> SimplicialComplex:
    """Wrap a 2D triangle soup as a complex with sorted-edge adjacency."""
    positions = np.asarray(positions, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    n = positions.shape[0]
    edges = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    und = np.unique(np.sort(edges, axis=1), axis=0)
    directed = np.concatenate([und, und[:, ::-1]])
    order = np.lexsort((directed[:, 1], directed[:, 0]))
    directed = directed[order]
    adj_offsets = np.zeros(n + 1, dtype=np.int64)
    np.add.at(adj_offsets, directed[:, 0] + 1, 1)
    np.cumsum(adj_offsets, out=adj_offsets)
    return SimplicialComplex(
        dim=positions.shape[1],
        positions=positions,
        simplices=triangles,
        adj_offsets=adj_offsets,
        adj_indices=directed[:, 1].copy(),
        cells=None,
    )
