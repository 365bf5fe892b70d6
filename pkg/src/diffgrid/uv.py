"""UV pipeline: disk meshes, Tutte embedding, distortion optimization.

The input is a triangulated disk-topology mesh; the initial parameterization
is the classic uniform-weight Tutte embedding with the boundary pinned to
the unit circle (arc-length spaced). Optimization then runs the alternating
per-color schedule with boundary vertices free to slide but re-normalized
onto the circle after every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import energy, optim
from .complexes import BoundaryConstraint, SimplicialComplex, mesh_complex
from .coloring import greedy_coloring


class NotADiskError(ValueError):
    """Mesh does not have exactly one boundary loop."""


class MeshFormatError(ValueError):
    """Unsupported mesh file content (e.g. non-triangle faces)."""


@dataclass
class TriangleMesh3D:
    positions: np.ndarray          # (V, 3)
    triangles: np.ndarray          # (F, 3)
    _complex: SimplicialComplex | None = field(default=None, repr=False)

    @property
    def vertex_count(self) -> int:
        return self.positions.shape[0]

    def adjacency(self) -> SimplicialComplex:
        """Edge adjacency of the mesh as a complex (positions are the 3D ones)."""
        if self._complex is None:
            self._complex = mesh_complex(self.positions, self.triangles)
        return self._complex


def load_obj(path) -> TriangleMesh3D:
    """Read a triangulated OBJ (v/f lines; vt and vn are tolerated)."""
    positions = []
    faces = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                positions.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                refs = parts[1:]
                if len(refs) != 3:
                    raise MeshFormatError(
                        f"{path}:{lineno}: only triangle faces are supported "
                        f"(got {len(refs)} vertices)")
                faces.append([int(r.split("/")[0]) - 1 for r in refs])
    if not positions or not faces:
        raise MeshFormatError(f"{path}: no vertices or faces found")
    pos = np.asarray(positions, dtype=float)
    tris = np.asarray(faces, dtype=np.int64)
    if tris.min() < 0 or tris.max() >= len(pos):
        raise MeshFormatError(f"{path}: face index out of range")
    return TriangleMesh3D(positions=pos, triangles=tris)


def save_obj(path, mesh: TriangleMesh3D, uv: np.ndarray | None = None) -> None:
    """Write the mesh, with UVs as vt lines (one per vertex) when given."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in mesh.positions:
            fh.write(f"v {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        if uv is not None:
            for t in uv:
                fh.write(f"vt {t[0]:.17g} {t[1]:.17g}\n")
        for tri in mesh.triangles:
            if uv is None:
                fh.write(f"f {tri[0]+1} {tri[1]+1} {tri[2]+1}\n")
            else:
                fh.write(f"f {tri[0]+1}/{tri[0]+1} {tri[1]+1}/{tri[1]+1} "
                         f"{tri[2]+1}/{tri[2]+1}\n")


def boundary_loop(mesh: TriangleMesh3D) -> np.ndarray:
    """The single boundary cycle, ordered with the face winding.

    Interior edges appear in both directions across faces; the unpaired
    directed edges are the boundary, and following them orients the loop
    consistently with the triangles. Raises NotADiskError for 0 or >= 2
    loops or non-manifold boundary vertices.
    """
    tris = mesh.triangles
    directed = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    edge_set = set(map(tuple, directed.tolist()))
    nxt: dict[int, int] = {}
    for a, b in edge_set:
        if (b, a) not in edge_set:
            if a in nxt:
                raise NotADiskError("non-manifold boundary vertex")
            nxt[a] = b
    if not nxt:
        raise NotADiskError("mesh is closed (no boundary loop)")
    start = min(nxt)
    loop = [start]
    cur = nxt[start]
    while cur != start:
        loop.append(cur)
        cur = nxt.get(cur, None)
        if cur is None or len(loop) > len(nxt):
            raise NotADiskError("boundary does not close into a single loop")
    if len(loop) != len(nxt):
        raise NotADiskError("mesh has multiple boundary loops")
    return np.asarray(loop, dtype=np.int64)


def tutte_embed(mesh: TriangleMesh3D, residual_tol: float = 1e-10) -> np.ndarray:
    """Uniform-weight Tutte embedding into the unit disk.

    Boundary vertices go on the unit circle spaced by cumulative 3D boundary
    edge length; each interior vertex ends up at the plain average of its
    neighbors (checked to ``residual_tol`` in max norm). The result has no
    flipped triangles.
    """
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla

    loop = boundary_loop(mesh)
    n = mesh.vertex_count
    uv = np.zeros((n, 2))

    ring_pos = mesh.positions[loop]
    seg = np.linalg.norm(np.roll(ring_pos, -1, axis=0) - ring_pos, axis=1)
    total = seg.sum()
    if total <= 0:
        raise NotADiskError("degenerate boundary loop")
    theta = 2.0 * math.pi * np.concatenate([[0.0], np.cumsum(seg[:-1])]) / total
    uv[loop, 0] = np.cos(theta)
    uv[loop, 1] = np.sin(theta)

    on_boundary = np.zeros(n, dtype=bool)
    on_boundary[loop] = True
    interior = np.flatnonzero(~on_boundary)
    if len(interior):
        adj = mesh.adjacency()
        local = np.full(n, -1, dtype=np.int64)
        local[interior] = np.arange(len(interior))
        rows, cols, vals = [], [], []
        rhs = np.zeros((len(interior), 2))
        for li, v in enumerate(interior):
            nbrs = adj.neighbors(v)
            w = 1.0 / len(nbrs)
            rows.append(li)
            cols.append(li)
            vals.append(1.0)
            for u in nbrs:
                if on_boundary[u]:
                    rhs[li] += w * uv[u]
                else:
                    rows.append(li)
                    cols.append(local[u])
                    vals.append(-w)
        mat = sp.csr_matrix((vals, (rows, cols)),
                            shape=(len(interior), len(interior)))
        uv[interior] = spla.spsolve(mat.tocsc(), rhs)

        # residual contract: every interior vertex at its ring average
        resid = 0.0
        for li, v in enumerate(interior):
            nbrs = adj.neighbors(v)
            resid = max(resid, np.abs(uv[v] - uv[nbrs].mean(axis=0)).max())
        if resid >= residual_tol:
            raise RuntimeError(f"tutte solve residual {resid:.3e} above tolerance")

    areas = energy.triangle_areas_signed(uv, mesh.triangles)
    if np.any(areas <= 0):
        raise RuntimeError("tutte embedding produced flipped triangles")
    return uv


def uv_complex(mesh: TriangleMesh3D, uv: np.ndarray):
    """UV positions as a 2D complex plus the circle boundary constraint."""
    complex_ = mesh_complex(uv, mesh.triangles)
    constraints = BoundaryConstraint.free(mesh.vertex_count, 2)
    constraints.on_circle[boundary_loop(mesh)] = True
    return complex_, constraints


def optimize_uv(mesh: TriangleMesh3D, kind: str, config: optim.OptConfig,
                uv0: np.ndarray | None = None):
    """Tutte init, greedy coloring, alternating optimization of one energy.

    Returns (uv, OptResult). Boundary vertices participate with their ring
    weights and are reprojected onto the unit circle after each step.
    """
    if uv0 is None:
        uv0 = tutte_embed(mesh)
    complex_, constraints = uv_complex(mesh, uv0)
    reference = energy.reference_for_uv(mesh.positions, mesh.triangles)
    spec = energy.EnergySpec(kind=kind, barrier=energy.BarrierSpec())
    coloring = greedy_coloring(complex_)
    if config.mode == optim.LINE_SEARCH:
        result = optim.line_search_optimize(complex_, spec, config, constraints,
                                            reference)
    else:
        result = optim.alternating_optimize(complex_, None, coloring, spec,
                                            config, constraints, reference)
    return result.positions, result


def histogram_report(uv: np.ndarray, mesh: TriangleMesh3D, bins: int = 60):
    """Angle and log10-area histograms as (kind, bin_low, bin_high, count) rows.

    Angles are binned in degrees over [0, 180]; areas over the data range of
    log10(area) with fixed-width bins (degenerate range widens to +-0.5).
    """
    angles = np.degrees(energy.triangle_angles(uv, mesh.triangles)).ravel()
    areas = energy.triangle_areas_unsigned(uv, mesh.triangles)
    rows = []
    counts, edges = np.histogram(angles, bins=bins, range=(0.0, 180.0))
    for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
        rows.append(("angle", float(lo), float(hi), int(c)))
    log_area = np.log10(np.maximum(areas, 1e-300))
    lo, hi = float(log_area.min()), float(log_area.max())
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(log_area, bins=bins, range=(lo, hi))
    for c, blo, bhi in zip(counts, edges[:-1], edges[1:]):
        rows.append(("log10_area", float(blo), float(bhi), int(c)))
    return rows
