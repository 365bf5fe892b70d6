"""Differential vertex representation: convex weights over neighbor rings.

Raw unconstrained weights live on directed adjacency slots (CSR layout,
matching ``SimplicialComplex.adj_indices``). Softplus maps them to positive
numbers which are normalized per ring into convex coefficients; the masked
forward map rewrites one color class of vertices as the weighted average of
its (fixed) neighbors. Gradients are hand-written reverse mode through the
whole chain, including the boundary projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .complexes import BoundaryConstraint, SimplicialComplex, apply_boundary
from .coloring import VertexColoring

PER_VERTEX = "per-vertex"
PER_DIMENSION = "per-dimension"

_DENOM_FLOOR = 1e-300  # keeps the division defined for raw -> -inf


def softplus(x):
    """log(1 + exp(x)), computed stably."""
    return np.logaddexp(0.0, x)


def softplus_inverse(y):
    """x with softplus(x) = y, for y > 0."""
    y = np.asarray(y, dtype=float)
    # log(expm1(y)) = y + log(1 - exp(-y))
    return y + np.log(-np.expm1(-y))


def _sigmoid(x):
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class DifferentialWeights:
    """Raw weights per directed neighbor slot, optionally per spatial axis."""

    mode: str                 # PER_VERTEX or PER_DIMENSION
    raw: np.ndarray           # (nnz,) or (nnz, dim)

    @classmethod
    def ones(cls, complex_: SimplicialComplex, mode: str = PER_VERTEX) -> "DifferentialWeights":
        nnz = complex_.edge_slot_count
        if mode == PER_VERTEX:
            raw = np.ones(nnz)
        elif mode == PER_DIMENSION:
            raw = np.ones((nnz, complex_.dim))
        else:
            raise ValueError(f"unknown weight mode {mode!r}")
        return cls(mode=mode, raw=raw)

    def copy(self) -> "DifferentialWeights":
        return DifferentialWeights(mode=self.mode, raw=self.raw.copy())


@dataclass
class ColorPlan:
    """Precomputed flat CSR slices for one set of active rows."""

    rows: np.ndarray        # (R,) active vertex ids
    entry_idx: np.ndarray   # (E,) indices into raw / adj_indices
    row_local: np.ndarray   # (E,) local row id per entry
    nbr: np.ndarray         # (E,) neighbor vertex ids

    @classmethod
    def build(cls, complex_: SimplicialComplex, rows: np.ndarray) -> "ColorPlan":
        rows = np.asarray(rows, dtype=np.int64)
        offsets = complex_.adj_offsets
        counts = offsets[rows + 1] - offsets[rows]
        if np.any(counts == 0):
            raise ValueError("active vertex with empty neighbor list")
        total = int(counts.sum())
        starts = np.repeat(offsets[rows], counts)
        within = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
        entry_idx = starts + within
        row_local = np.repeat(np.arange(len(rows)), counts)
        return cls(rows=rows, entry_idx=entry_idx, row_local=row_local,
                   nbr=complex_.adj_indices[entry_idx])


def normalize(weights: DifferentialWeights, complex_: SimplicialComplex, vertex: int) -> np.ndarray:
    """Convex coefficients for one vertex: softplus(raw) / row sum.

    Shape (deg,) in per-vertex mode, (deg, dim) per dimension; every column
    is strictly positive and sums to 1.
    """
    lo, hi = complex_.adj_offsets[vertex], complex_.adj_offsets[vertex + 1]
    if hi == lo:
        raise ValueError(f"vertex {vertex} has no neighbors")
    s = softplus(weights.raw[lo:hi])
    denom = np.maximum(s.sum(axis=0), _DENOM_FLOOR)
    return s / denom


def coefficients_for(weights: DifferentialWeights, plan: ColorPlan):
    """Normalized coefficients for all entries of a plan, plus row sums."""
    s = softplus(weights.raw[plan.entry_idx])
    n_rows = len(plan.rows)
    if weights.mode == PER_VERTEX:
        denom = np.maximum(np.bincount(plan.row_local, weights=s, minlength=n_rows),
                           _DENOM_FLOOR)
        coeff = s / denom[plan.row_local]
    else:
        denom = np.empty((n_rows, s.shape[1]))
        for axis in range(s.shape[1]):
            denom[:, axis] = np.bincount(plan.row_local, weights=s[:, axis], minlength=n_rows)
        denom = np.maximum(denom, _DENOM_FLOOR)
        coeff = s / denom[plan.row_local]
    return coeff, denom


@dataclass
class ForwardCache:
    """Intermediates of one masked forward pass, kept for backprop."""

    plan: ColorPlan
    coeff: np.ndarray            # entry coefficients, (E,) or (E, dim)
    denom: np.ndarray            # row sums of softplus
    base_positions: np.ndarray   # neighbor source positions (all vertices)
    pre_boundary: np.ndarray     # active-row positions before apply_boundary


def forward_active(complex_: SimplicialComplex, weights: DifferentialWeights,
                   plan: ColorPlan, positions: np.ndarray,
                   constraints: BoundaryConstraint):
    """Rewrite active rows as convex combinations of neighbors, fix boundaries.

    Inactive rows are copied bit-for-bit. Returns (positions, cache).
    """
    coeff, denom = coefficients_for(weights, plan)
    n_rows = len(plan.rows)
    dim = positions.shape[1]
    new_active = np.empty((n_rows, dim))
    nbr_pos = positions[plan.nbr]
    for axis in range(dim):
        c = coeff if weights.mode == PER_VERTEX else coeff[:, axis]
        new_active[:, axis] = np.bincount(plan.row_local, weights=c * nbr_pos[:, axis],
                                          minlength=n_rows)
    out = positions.copy()
    out[plan.rows] = new_active
    # boundary projection, restricted to active rows (others are untouched)
    m = constraints.pinned_mask[plan.rows]
    out_rows = out[plan.rows]
    out_rows[m] = constraints.pinned_values[plan.rows][m]
    circ = constraints.on_circle[plan.rows]
    if circ.any():
        p = out_rows[circ]
        norms = np.linalg.norm(p, axis=1)
        out_rows[circ] = p / np.maximum(norms, 1e-300)[:, None]
    out[plan.rows] = out_rows
    cache = ForwardCache(plan=plan, coeff=coeff, denom=denom,
                         base_positions=positions, pre_boundary=new_active)
    return out, cache


def backward_active(weights: DifferentialWeights, cache: ForwardCache,
                    grad_positions: np.ndarray,
                    constraints: BoundaryConstraint) -> np.ndarray:
    """Gradient w.r.t. active raw entries, given dL/d(output positions).

    Chains through the boundary projection, the convex combination, the
    normalization and the softplus. Returns an array shaped like
    ``weights.raw[plan.entry_idx]``.
    """
    plan = cache.plan
    g = grad_positions[plan.rows].copy()
    # boundary backprop: pinned components are constants; circle rows project
    g[constraints.pinned_mask[plan.rows]] = 0.0
    circ = constraints.on_circle[plan.rows]
    if circ.any():
        p = cache.pre_boundary[circ]
        r = np.maximum(np.linalg.norm(p, axis=1), 1e-300)
        phat = p / r[:, None]
        gc = g[circ]
        g[circ] = (gc - (gc * phat).sum(axis=1)[:, None] * phat) / r[:, None]

    nbr_pos = cache.base_positions[plan.nbr]
    n_rows = len(plan.rows)
    if weights.mode == PER_VERTEX:
        # dL/dcoeff_e = sum_axis g[row, axis] * nbr_pos[e, axis]
        g_coeff = np.einsum("ij,ij->i", g[plan.row_local], nbr_pos)
        inner = np.bincount(plan.row_local, weights=g_coeff * cache.coeff,
                            minlength=n_rows)
        g_s = (g_coeff - inner[plan.row_local]) / cache.denom[plan.row_local]
    else:
        g_coeff = g[plan.row_local] * nbr_pos
        g_s = np.empty_like(g_coeff)
        for axis in range(g_coeff.shape[1]):
            inner = np.bincount(plan.row_local,
                                weights=g_coeff[:, axis] * cache.coeff[:, axis],
                                minlength=n_rows)
            g_s[:, axis] = (g_coeff[:, axis] - inner[plan.row_local]) \
                / cache.denom[plan.row_local, axis]
    return g_s * _sigmoid(weights.raw[plan.entry_idx])


def forward_positions(complex_: SimplicialComplex, weights: DifferentialWeights,
                      coloring: VertexColoring, active_color: int | None,
                      positions: np.ndarray | None = None,
                      constraints: BoundaryConstraint | None = None) -> np.ndarray:
    """One masked update: active-color vertices move to their weighted ring
    average (componentwise per axis in per-dimension mode), everything else
    is copied unchanged, then boundary constraints are re-applied.

    ``active_color=None`` (or an empty color) is the identity.
    """
    pos = complex_.positions if positions is None else positions
    if constraints is None:
        constraints = BoundaryConstraint.free(complex_.vertex_count, complex_.dim)
    if active_color is None:
        return pos.copy()
    rows = coloring.members[active_color]
    if len(rows) == 0:
        return pos.copy()
    plan = ColorPlan.build(complex_, rows)
    out, _ = forward_active(complex_, weights, plan, pos, constraints)
    return out


def fit_weights_to_positions(complex_: SimplicialComplex, target: np.ndarray,
                             vertex: int, positions: np.ndarray | None = None,
                             margin: float = 1e-9):
    """Raw weights reproducing ``target`` as a convex combination of the ring.

    Feasible iff the target lies strictly inside the ring's convex hull
    (coefficients must be strictly positive). Solved as a small LP that
    maximizes the smallest coefficient, then polished by an equality-
    constrained least-squares step. Returns raw weights (per-vertex mode,
    one scalar per ring slot) or None when infeasible.
    """
    from scipy.optimize import linprog

    pos = complex_.positions if positions is None else positions
    ring = pos[complex_.neighbors(vertex)]
    n = ring.shape[0]
    d = ring.shape[1]
    target = np.asarray(target, dtype=float)
    # variables: (c_1..c_n, t); maximize t s.t. c_k >= t, sum c = 1, ring^T c = target
    a_eq = np.zeros((d + 1, n + 1))
    a_eq[:d, :n] = ring.T
    a_eq[d, :n] = 1.0
    b_eq = np.concatenate([target, [1.0]])
    a_ub = np.zeros((n, n + 1))
    a_ub[:, :n] = -np.eye(n)
    a_ub[:, n] = 1.0
    res = linprog(c=np.concatenate([np.zeros(n), [-1.0]]),
                  A_ub=a_ub, b_ub=np.zeros(n),
                  A_eq=a_eq, b_eq=b_eq,
                  bounds=[(None, None)] * n + [(None, None)],
                  method="highs")
    if not res.success or res.x[n] <= margin:
        return None
    c = res.x[:n]
    # polish: minimize ||dc|| s.t. ring^T (c+dc) = target, sum dc = 0
    kkt_a = np.zeros((n + d + 1, n + d + 1))
    kkt_a[:n, :n] = np.eye(n)
    kkt_a[:n, n:] = a_eq[:, :n].T
    kkt_a[n:, :n] = a_eq[:, :n]
    rhs = np.zeros(n + d + 1)
    rhs[n:] = b_eq - a_eq[:, :n] @ c
    try:
        sol = np.linalg.lstsq(kkt_a, rhs, rcond=None)[0]
        c_new = c + sol[:n]
        if np.all(c_new > 0):
            c = c_new
    except np.linalg.LinAlgError:
        pass
    c = c / c.sum()
    # any positive rescale of softplus outputs yields the same coefficients
    return softplus_inverse(c * n * np.log(2.0))
