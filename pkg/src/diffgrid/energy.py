"""Scalar objectives and their position gradients.

Covers the toy grid losses (axis pull, center pull, spin), the five UV
distortion energies, the IPC-style barrier with its linear push term, and a
hook for sample-based reconstruction losses. Every gradient here is written
by hand (reverse mode through the closed-form expressions) and is checked
against central finite differences in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import diffrep
from .complexes import BoundaryConstraint, SimplicialComplex
from .coloring import VertexColoring

# energy kinds
LX = "lx"
LXY = "lxy"
LSPIN = "lspin"
ANGLE_PRESERVING = "angle-preserving"
AREA_PRESERVING = "area-preserving"
SYMMETRIC_DIRICHLET = "sym-dirichlet"
EQUILATERAL = "equilateral"
EQUIAREAL = "equiareal"
IMAGE_L1 = "image-l1"

TOY_KINDS = (LX, LXY, LSPIN)
UV_KINDS = (ANGLE_PRESERVING, AREA_PRESERVING, SYMMETRIC_DIRICHLET,
            EQUILATERAL, EQUIAREAL)

_TINY = 1e-30


class GradientUndefinedError(RuntimeError):
    """Energy is non-finite at the evaluation point."""


@dataclass
class BarrierSpec:
    enabled: bool = True
    d_hat: float = 1e-8
    linear_scale: float = 1.0

    def __post_init__(self):
        if self.enabled and self.d_hat <= 0:
            raise ValueError("barrier threshold must be positive")


@dataclass
class EnergySpec:
    kind: str
    target_angle: float = math.radians(175.0)   # spin target, radians
    barrier: BarrierSpec = field(default_factory=BarrierSpec)

    def __post_init__(self):
        if self.kind not in TOY_KINDS + UV_KINDS + (IMAGE_L1,):
            raise ValueError(f"unknown energy kind {self.kind!r}")
        if not math.isfinite(self.target_angle):
            raise ValueError("target angle must be finite")


@dataclass
class ReferenceGeometry:
    """Rest data computed once from the undeformed input.

    Toy losses use the per-vertex initial polar coordinates and the mask of
    vertices that count toward the mean (everything not fully pinned). UV
    energies use per-triangle 3D angles/areas and the inverse of the
    isometrically flattened rest edge matrix. Sample-based losses plug in
    through ``image_hook``.
    """

    loss_mask: np.ndarray | None = None       # (V,) vertices counted in toy means
    init_radius: np.ndarray | None = None     # (V,)
    init_angle: np.ndarray | None = None      # (V,) radians; arbitrary where undefined
    angle_defined: np.ndarray | None = None   # (V,) radius > 0 at init
    rest_angles: np.ndarray | None = None     # (F, 3)
    rest_areas: np.ndarray | None = None      # (F,)
    rest_frames: np.ndarray | None = None     # (F, 2, 2) inverse flattened edges
    image_hook: Callable | None = None        # positions -> (value, grad)


def reference_for_toy(complex_: SimplicialComplex,
                      constraints: BoundaryConstraint) -> ReferenceGeometry:
    pos = complex_.positions
    radius = np.linalg.norm(pos[:, :2], axis=1)
    defined = radius > _TINY
    angle = np.zeros(len(pos))
    angle[defined] = np.arctan2(pos[defined, 1], pos[defined, 0])
    return ReferenceGeometry(
        loss_mask=~constraints.fully_pinned(),
        init_radius=radius,
        init_angle=angle,
        angle_defined=defined,
    )


def reference_for_uv(positions3d: np.ndarray, triangles: np.ndarray) -> ReferenceGeometry:
    """Rest angles, areas, and flattening frames of a 3D triangle mesh."""
    p0 = positions3d[triangles[:, 0]]
    e1 = positions3d[triangles[:, 1]] - p0
    e2 = positions3d[triangles[:, 2]] - p0
    a = np.linalg.norm(e1, axis=1)
    cross = np.cross(e1, e2)
    cnorm = np.linalg.norm(cross, axis=1) if cross.ndim == 2 else np.abs(cross)
    areas = 0.5 * cnorm
    if np.any(areas <= _TINY):
        raise ValueError("degenerate rest triangle")
    x2 = np.einsum("ij,ij->i", e1, e2) / a
    y2 = cnorm / a
    frames = np.zeros((len(triangles), 2, 2))
    frames[:, 0, 0] = 1.0 / a
    frames[:, 0, 1] = -x2 / (a * y2)
    frames[:, 1, 1] = 1.0 / y2
    angles = triangle_angles(positions3d, triangles)
    return ReferenceGeometry(rest_angles=angles, rest_areas=areas, rest_frames=frames)


# ---------------------------------------------------------------------------
# triangle primitives

def triangle_quantities(p0, p1, p2):
    """Interior angles (radians, summing to pi) and unsigned area.

    A zero-length edge is reported as a 0/pi split: pi at the lowest-index
    corner adjacent to the degenerate edge, 0 elsewhere, area 0.
    """
    pts = np.asarray([p0, p1, p2], dtype=float)
    edges = [pts[1] - pts[0], pts[2] - pts[1], pts[0] - pts[2]]
    lens = [np.linalg.norm(e) for e in edges]
    if min(lens) < _TINY:
        angles = np.zeros(3)
        zero_edge = int(np.argmin(lens))  # edge k joins corners k, k+1
        angles[zero_edge] = math.pi
        return angles, 0.0
    angles = triangle_angles(pts, np.array([[0, 1, 2]]))[0]
    area = float(triangle_areas_unsigned(pts, np.array([[0, 1, 2]]))[0])
    return angles, area


def _cross_mag(u, v):
    """|u x v| for batches of 2D or 3D vectors."""
    if u.shape[-1] == 2:
        return np.abs(u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])
    return np.linalg.norm(np.cross(u, v), axis=-1)


def triangle_angles(positions: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Interior angles per corner, vectorized; works in 2D or 3D."""
    p = positions[triangles]  # (F, 3, d)
    out = np.empty((len(triangles), 3))
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        v = p[:, (k + 2) % 3] - p[:, k]
        d = np.einsum("ij,ij->i", u, v)
        out[:, k] = np.arctan2(_cross_mag(u, v), d)
    return out


def triangle_areas_unsigned(positions, triangles):
    p = positions[triangles]
    return 0.5 * _cross_mag(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])


def triangle_areas_signed(positions: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = positions[triangles]
    u = p[:, 1] - p[:, 0]
    v = p[:, 2] - p[:, 0]
    return 0.5 * (u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])


def _scatter_rows(grad, idx, vals):
    """grad[idx] += vals with duplicate indices, via bincount per column."""
    n = grad.shape[0]
    for a in range(grad.shape[1]):
        grad[:, a] += np.bincount(idx, weights=vals[:, a], minlength=n)


def _accumulate_area_grad(grad, triangles, scale, positions):
    """grad += scale_f * dA_f/dp for signed 2D areas."""
    p = positions[triangles]
    a, b, c = p[:, 0], p[:, 1], p[:, 2]
    ga = 0.5 * np.stack([b[:, 1] - c[:, 1], c[:, 0] - b[:, 0]], axis=1)
    gb = 0.5 * np.stack([c[:, 1] - a[:, 1], a[:, 0] - c[:, 0]], axis=1)
    gc = 0.5 * np.stack([a[:, 1] - b[:, 1], b[:, 0] - a[:, 0]], axis=1)
    s = scale[:, None]
    _scatter_rows(grad, triangles[:, 0], s * ga)
    _scatter_rows(grad, triangles[:, 1], s * gb)
    _scatter_rows(grad, triangles[:, 2], s * gc)


def _angle_grads_2d(positions, triangles):
    """Angles plus d(angle)/d(corner positions) for 2D triangles.

    Returns (angles (F,3), grads (F,3,3,2)); grads[f,k,j] is the gradient of
    angle k w.r.t. corner j of triangle f.
    """
    p = positions[triangles]
    f = len(triangles)
    angles = np.empty((f, 3))
    grads = np.zeros((f, 3, 3, 2))
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    two_area = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    sgn = np.where(two_area >= 0, 1.0, -1.0)
    s_abs = np.abs(two_area)
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        v = p[:, (k + 2) % 3] - p[:, k]
        d = np.einsum("ij,ij->i", u, v)
        denom = np.maximum(s_abs * s_abs + d * d, _TINY)
        angles[:, k] = np.arctan2(s_abs, d)
        ds = (d / denom * sgn)[:, None]
        dd = (-s_abs / denom)[:, None]
        # cross(u, v) = ux vy - uy vx
        g_u = ds * np.stack([v[:, 1], -v[:, 0]], axis=1) + dd * v
        g_v = ds * np.stack([-u[:, 1], u[:, 0]], axis=1) + dd * u
        grads[:, k, (k + 1) % 3] = g_u
        grads[:, k, (k + 2) % 3] = g_v
        grads[:, k, k] = -g_u - g_v
    return angles, grads


def jacobian_singular_values(rest_triangle, uv_triangle):
    """Singular values (s1 >= s2) of the rest-to-UV linear map.

    The rest triangle (2D or 3D points) is flattened isometrically into its
    own plane first.
    """
    rest = np.asarray(rest_triangle, dtype=float)
    uv = np.asarray(uv_triangle, dtype=float)
    if rest.shape[1] == 2:
        rest = np.concatenate([rest, np.zeros((3, 1))], axis=1)
    ref = reference_for_uv(rest, np.array([[0, 1, 2]]))
    jac = _jacobians(uv, np.array([[0, 1, 2]]), ref.rest_frames)[0]
    frob = float(np.sum(jac * jac))
    det = float(jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0])
    disc = max(frob * frob - 4.0 * det * det, 0.0)
    root = math.sqrt(disc)
    s1 = math.sqrt(max((frob + root) / 2.0, 0.0))
    s2 = math.sqrt(max((frob - root) / 2.0, 0.0))
    return s1, s2


def _jacobians(uv: np.ndarray, triangles: np.ndarray, frames: np.ndarray) -> np.ndarray:
    """2x2 maps from flattened rest triangles to UV triangles, J = U B."""
    p0 = uv[triangles[:, 0]]
    u = np.stack([uv[triangles[:, 1]] - p0, uv[triangles[:, 2]] - p0], axis=2)  # (F,2,2) cols
    return u @ frames


# ---------------------------------------------------------------------------
# toy losses

def eval_toy(spec: EnergySpec, positions: np.ndarray,
             reference: ReferenceGeometry) -> float:
    return _toy_value_grad(spec, positions, reference, want_grad=False)[0]


def _toy_value_grad(spec, positions, reference, want_grad=True):
    mask = reference.loss_mask
    if mask is None:
        mask = np.ones(len(positions), dtype=bool)
    n = max(int(mask.sum()), 1)
    grad = np.zeros_like(positions) if want_grad else None

    if spec.kind in (LX, LXY):
        axes = (0,) if spec.kind == LX else (0, 1)
        value = 0.0
        for axis in axes:
            x = positions[mask, axis]
            value += float(np.abs(x).sum()) / n
            if want_grad:
                grad[mask, axis] += np.sign(x) / n
        return value, grad

    if spec.kind != LSPIN:
        raise ValueError(f"not a toy energy: {spec.kind!r}")
    x = positions[mask, 0]
    y = positions[mask, 1]
    r = np.sqrt(x * x + y * y)
    r0 = reference.init_radius[mask]
    defined = reference.angle_defined[mask]
    theta0 = reference.init_angle[mask]

    dr = r - r0
    value = float((dr * dr).sum())
    gx = np.zeros_like(x)
    gy = np.zeros_like(y)
    r_pos = r > _TINY  # radius term has no defined gradient exactly at 0
    gx[r_pos] = (2.0 * dr * x)[r_pos] / r[r_pos]
    gy[r_pos] = (2.0 * dr * y)[r_pos] / r[r_pos]

    theta = np.arctan2(y, x)
    # full residual wrapped into (-pi, pi]: overshooting vertices are pulled
    # back to the nearest equivalent target instead of being chased around
    # the circle (an unbounded residual destabilizes the whole run)
    a = math.pi - np.mod(math.pi - (spec.target_angle + theta0 - theta),
                         2.0 * math.pi)
    cur_ok = defined & (r > _TINY)
    value += float((a[cur_ok] ** 2).sum())
    r2 = np.maximum(r * r, _TINY)
    gx[cur_ok] += (2.0 * a * y / r2)[cur_ok]
    gy[cur_ok] += (-2.0 * a * x / r2)[cur_ok]

    if want_grad:
        grad[mask, 0] = gx / n
        grad[mask, 1] = gy / n
    return value / n, grad


# ---------------------------------------------------------------------------
# UV energies

def eval_uv_energy(spec: EnergySpec, reference: ReferenceGeometry,
                   uv: np.ndarray, triangles: np.ndarray) -> float:
    return _uv_value_grad(spec, uv, reference, triangles, want_grad=False)[0]


def _uv_value_grad(spec, uv, reference, triangles, want_grad=True):
    f = len(triangles)
    grad = np.zeros_like(uv) if want_grad else None

    if spec.kind in (ANGLE_PRESERVING, EQUILATERAL):
        if want_grad:
            angles, agrads = _angle_grads_2d(uv, triangles)
        else:
            angles = triangle_angles(uv, triangles)
        target = reference.rest_angles if spec.kind == ANGLE_PRESERVING \
            else math.pi / 3.0
        dev = angles - target
        value = float(np.abs(dev).sum()) / (3 * f)
        if want_grad:
            w = np.sign(dev) / (3 * f)
            contrib = np.einsum("fk,fkjd->fjd", w, agrads)
            _scatter_rows(grad, triangles.ravel(), contrib.reshape(-1, 2))
        return value, grad

    if spec.kind in (AREA_PRESERVING, EQUIAREAL):
        areas = triangle_areas_signed(uv, triangles)
        q = areas / reference.rest_areas if spec.kind == AREA_PRESERVING else areas
        mean = q.mean()
        value = float(((q - mean) ** 2).mean())
        if want_grad:
            dq = 2.0 * (q - mean) / f
            scale = dq / reference.rest_areas if spec.kind == AREA_PRESERVING else dq
            _accumulate_area_grad(grad, triangles, scale, uv)
        return value, grad

    if spec.kind != SYMMETRIC_DIRICHLET:
        raise ValueError(f"not a UV energy: {spec.kind!r}")
    jac = _jacobians(uv, triangles, reference.rest_frames)
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    frob = np.einsum("fij,fij->f", jac, jac)
    ok = np.abs(det) >= _TINY
    frames = reference.rest_frames
    rest_areas = reference.rest_areas
    if ok.all():
        value = float((rest_areas * (1.0 + 1.0 / (det * det)) * frob).mean())
    else:
        # degenerate triangles blow the energy up; the gradient of the
        # remaining finite terms still gives the optimizer a recovery
        # direction (the inverted candidate is rolled back regardless)
        value = math.inf
        if not want_grad:
            return value, grad
        jac, det, frob = jac[ok], det[ok], frob[ok]
        triangles, frames, rest_areas = triangles[ok], frames[ok], rest_areas[ok]
    if want_grad and len(triangles):
        inv_det2 = 1.0 / (det * det)
        w = rest_areas / f
        # dE/dJ = w [ (1 + det^-2) 2J - 2 frob det^-3 * cof(J) ]
        cof = np.empty_like(jac)
        cof[:, 0, 0] = jac[:, 1, 1]
        cof[:, 0, 1] = -jac[:, 1, 0]
        cof[:, 1, 0] = -jac[:, 0, 1]
        cof[:, 1, 1] = jac[:, 0, 0]
        g_j = (w * (1.0 + inv_det2))[:, None, None] * 2.0 * jac \
            - (w * 2.0 * frob / (det ** 3))[:, None, None] * cof
        g_u = g_j @ np.swapaxes(frames, 1, 2)  # (F,2,2), columns per edge
        g1 = g_u[:, :, 0]
        g2 = g_u[:, :, 1]
        _scatter_rows(grad, triangles[:, 1], g1)
        _scatter_rows(grad, triangles[:, 2], g2)
        _scatter_rows(grad, triangles[:, 0], -g1 - g2)
    return value, grad


# ---------------------------------------------------------------------------
# barrier

def ipc_barrier(d, d_hat: float):
    """Barrier value: 0 for d >= d_hat, -(d-d_hat)^2 ln(d/d_hat) inside,
    +inf at or below zero measure."""
    if d_hat <= 0:
        raise ValueError("d_hat must be positive")
    d = np.asarray(d, dtype=float)
    scalar = d.ndim == 0
    d = np.atleast_1d(d)
    out = np.zeros_like(d)
    inside = (d > 0) & (d < d_hat)
    dd = d[inside]
    out[inside] = -((dd - d_hat) ** 2) * np.log(dd / d_hat)
    out[d <= 0] = math.inf
    return float(out[0]) if scalar else out


def _ipc_barrier_deriv(d, d_hat):
    out = np.zeros_like(d)
    inside = (d > 0) & (d < d_hat)
    dd = d[inside]
    out[inside] = -2.0 * (dd - d_hat) * np.log(dd / d_hat) - ((dd - d_hat) ** 2) / dd
    return out


def barrier_energy(complex_: SimplicialComplex, spec: BarrierSpec,
                   positions: np.ndarray | None = None) -> float:
    return barrier_value_grad(complex_, spec, positions, want_grad=False)[0]


def barrier_value_grad(complex_: SimplicialComplex, spec: BarrierSpec,
                       positions: np.ndarray | None = None, want_grad=True):
    """Sum over subdivided simplices of barrier + linear push, with gradient."""
    pos = complex_.positions if positions is None else positions
    grad = np.zeros_like(pos) if want_grad else None
    if not spec.enabled or len(complex_.simplices) == 0:
        return 0.0, grad

    from .complexes import signed_measures
    d = signed_measures(complex_, pos)
    value = float(np.sum(ipc_barrier(d, spec.d_hat)))
    value += spec.linear_scale * float(np.sum(np.maximum(0.0, 2.0 * spec.d_hat - d)))
    if not want_grad:
        return value, None

    # the gradient stays finite even when the value is +inf: the log barrier
    # only contributes on (0, d_hat) while the linear push keeps acting on
    # inverted simplices, so a momentarily inverted candidate still receives
    # a recovery direction (acceptance is guarded by the reset loop anyway)
    dval = _ipc_barrier_deriv(d, spec.d_hat)
    dval -= spec.linear_scale * (d < 2.0 * spec.d_hat)
    active = dval != 0.0
    if not np.any(active):
        return value, grad
    tris = complex_.simplices[active]
    scale = dval[active]
    if complex_.dim == 2:
        _accumulate_area_grad(grad, tris, scale, pos)
    else:
        p = pos[tris]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        e3 = p[:, 3] - p[:, 0]
        g1 = np.cross(e2, e3) / 6.0
        g2 = np.cross(e3, e1) / 6.0
        g3 = np.cross(e1, e2) / 6.0
        s = scale[:, None]
        _scatter_rows(grad, tris[:, 1], s * g1)
        _scatter_rows(grad, tris[:, 2], s * g2)
        _scatter_rows(grad, tris[:, 3], s * g3)
        _scatter_rows(grad, tris[:, 0], -s * (g1 + g2 + g3))
    return value, grad


# ---------------------------------------------------------------------------
# composition

def loss_value_grad(spec: EnergySpec, positions: np.ndarray,
                    reference: ReferenceGeometry, complex_: SimplicialComplex,
                    want_grad=True):
    """Loss part only (no barrier): value and dL/dpositions."""
    if spec.kind in TOY_KINDS:
        return _toy_value_grad(spec, positions, reference, want_grad)
    if spec.kind in UV_KINDS:
        return _uv_value_grad(spec, positions, reference, complex_.simplices, want_grad)
    if spec.kind == IMAGE_L1:
        if reference.image_hook is None:
            raise ValueError("image-l1 energy needs an image_hook on the reference")
        return reference.image_hook(positions, want_grad)
    raise ValueError(f"unknown energy kind {spec.kind!r}")


def total_value_grad(spec: EnergySpec, positions: np.ndarray,
                     reference: ReferenceGeometry, complex_: SimplicialComplex,
                     want_grad=True):
    """(loss, barrier, dTotal/dpositions).

    The gradient is returned whenever both components produced one, even if
    a value is +inf (inverted candidates keep a finite recovery direction;
    see barrier_value_grad). Callers that need strict finiteness check the
    values.
    """
    lval, lgrad = loss_value_grad(spec, positions, reference, complex_, want_grad)
    bval, bgrad = barrier_value_grad(complex_, spec.barrier, positions, want_grad)
    grad = None
    if want_grad and lgrad is not None and bgrad is not None:
        grad = lgrad + bgrad
    return lval, bval, grad


def energy_gradient(spec: EnergySpec, positions: np.ndarray,
                    reference: ReferenceGeometry, complex_: SimplicialComplex,
                    weights: diffrep.DifferentialWeights,
                    coloring: VertexColoring, active_color: int,
                    constraints: BoundaryConstraint):
    """Exact gradient of loss+barrier w.r.t. the active raw weights.

    Differentiates through the whole forward chain (softplus normalization,
    convex combination of the fixed neighbors, boundary projection).
    Returns (total energy at the forward point, gradient shaped like the
    active raw entries). Raises GradientUndefinedError when the energy is
    non-finite there.
    """
    rows = coloring.members[active_color]
    plan = diffrep.ColorPlan.build(complex_, rows)
    new_pos, cache = diffrep.forward_active(complex_, weights, plan, positions, constraints)
    lval, bval, grad_pos = total_value_grad(spec, new_pos, reference, complex_)
    total = lval + bval
    if not math.isfinite(total) or grad_pos is None:
        raise GradientUndefinedError(f"non-finite energy {total} at forward point")
    grad_raw = diffrep.backward_active(weights, cache, grad_pos, constraints)
    return total, grad_raw
