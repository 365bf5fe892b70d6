"""Shared fixtures and independent oracles for the test suite."""

import math

import numpy as np
import pytest

from diffgrid.uv import TriangleMesh3D


# ---------------------------------------------------------------------------
# independent kernel oracle: explicit half-plane clipping, then membership

def clip_polygon_halfplane(poly, a, b):
    """Sutherland-Hodgman clip of poly by the left half-plane of segment a->b."""
    def side(p):
        return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])

    out = []
    n = len(poly)
    for i in range(n):
        p, q = poly[i], poly[(i + 1) % n]
        sp, sq = side(p), side(q)
        if sp >= 0:
            out.append(p)
        if (sp > 0) != (sq > 0) and sp != sq:
            t = sp / (sp - sq)
            out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return out


def kernel_polygon(ring):
    """Explicit kernel of a polygon: a big box clipped by every edge."""
    m = float(np.abs(ring).max()) * 4 + 4
    poly = [(-m, -m), (m, -m), (m, m), (-m, m)]
    n = len(ring)
    for i in range(n):
        poly = clip_polygon_halfplane(poly, ring[i], ring[(i + 1) % n])
        if not poly:
            return []
    return poly


def point_strictly_inside_convex(point, poly, eps=1e-12):
    n = len(poly)
    if n < 3:
        return False
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        s = (b[0] - a[0]) * (point[1] - a[1]) - (b[1] - a[1]) * (point[0] - a[0])
        if s <= eps:
            return False
    return True


def kernel_oracle(candidate, ring):
    """Brute-force strict kernel membership via the explicit kernel polygon."""
    return point_strictly_inside_convex(candidate, kernel_polygon(ring))


def random_star_ring(rng, max_vertices=8):
    """Random star-shaped (w.r.t. origin) CCW polygon."""
    n = rng.integers(3, max_vertices + 1)
    angles = np.sort(rng.uniform(0.0, 2.0 * math.pi, n))
    # keep consecutive angles separated so edges are well conditioned
    while np.min(np.diff(np.concatenate([angles, [angles[0] + 2 * math.pi]]))) < 0.05:
        angles = np.sort(rng.uniform(0.0, 2.0 * math.pi, n))
    radii = rng.uniform(0.25, 1.5, n)
    return np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)


# ---------------------------------------------------------------------------
# finite differences

def central_diff(f, x, h=1e-6):
    """Central finite-difference gradient of scalar f over array x."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        keep = x[idx]
        x[idx] = keep + h
        fp = f(x)
        x[idx] = keep - h
        fm = f(x)
        x[idx] = keep
        grad[idx] = (fp - fm) / (2.0 * h)
        it.iternext()
    return grad


def rel_errors(analytic, numeric, floor=1e-9):
    denom = np.maximum(np.abs(numeric), floor)
    return np.abs(analytic - numeric) / denom


# ---------------------------------------------------------------------------
# disk mesh builder (concentric-ring triangulation of the unit disk, lifted)

def disk_mesh(rings=6, segments=12, lift=None, seed=None) -> TriangleMesh3D:
    """Triangulated disk: a center vertex plus concentric rings.

    ``lift`` maps (x, y) arrays to z heights; default is a double bump so UV
    energies have something to optimize. Roughly rings*segments*2 triangles.
    """
    verts = [(0.0, 0.0)]
    for r in range(1, rings + 1):
        rad = r / rings
        for s in range(segments):
            ang = 2.0 * math.pi * (s + (0.5 if r % 2 else 0.0)) / segments
            verts.append((rad * math.cos(ang), rad * math.sin(ang)))
    verts = np.asarray(verts)

    tris = []
    for s in range(segments):
        tris.append((0, 1 + s, 1 + (s + 1) % segments))
    for r in range(1, rings):
        lo = 1 + (r - 1) * segments
        hi = 1 + r * segments
        for s in range(segments):
            a = lo + s
            b = lo + (s + 1) % segments
            c = hi + s
            d = hi + (s + 1) % segments
            tris.append((a, d, c))
            tris.append((a, b, d))
    tris = np.asarray(tris, dtype=np.int64)

    x, y = verts[:, 0], verts[:, 1]
    if lift is None:
        z = 0.35 * np.exp(-8.0 * ((x - 0.3) ** 2 + y ** 2)) \
            + 0.25 * np.exp(-12.0 * ((x + 0.4) ** 2 + (y - 0.2) ** 2))
    else:
        z = lift(x, y)
    if seed is not None:
        rng = np.random.default_rng(seed)
        z = z + 0.01 * rng.standard_normal(len(z))
    pos = np.stack([x, y, z], axis=1)
    return TriangleMesh3D(positions=pos, triangles=tris)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------------------
# synthetic photo-like targets for compaction tests

def synthetic_photo(h, w, kind="scene", seed=0):
    """Deterministic photo-like test images with edges and texture."""
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    img = np.zeros((h, w, 3))
    if kind == "scene":
        img[:, :, 0] = 0.35 + 0.5 * xx
        img[:, :, 1] = 0.3 + 0.4 * yy
        img[:, :, 2] = 0.55 - 0.3 * xx * yy
        # a few hard-edged shapes
        disc = (xx - 0.32) ** 2 + (yy - 0.4) ** 2 < 0.05
        img[disc] = (0.85, 0.3, 0.2)
        bar = (np.abs(xx - 0.7) < 0.06) & (yy > 0.15) & (yy < 0.9)
        img[bar] = (0.1, 0.15, 0.5)
        tri = (yy > 0.6) & (yy - 0.6 > 1.8 * np.abs(xx - 0.2))
        img[tri] = (0.95, 0.85, 0.3)
    elif kind == "detail":
        # high-frequency texture band over a smooth background (waterfall-ish)
        img[:, :, 0] = 0.45 + 0.25 * yy
        img[:, :, 1] = 0.5 + 0.2 * xx
        img[:, :, 2] = 0.6 - 0.2 * yy
        stripes = 0.5 + 0.5 * np.sin(2 * math.pi * (14 * xx + 2.5 * yy))
        band = (xx > 0.25) & (xx < 0.75)
        for c in range(3):
            img[:, :, c] = np.where(band, 0.25 + 0.55 * stripes, img[:, :, c])
    elif kind == "edges":
        img[:] = 0.2
        img[:, : w // 2] = (0.85, 0.8, 0.75)
        diag = yy > xx
        img[diag & (xx > 0.5)] = (0.3, 0.6, 0.4)
    else:
        raise ValueError(kind)
    img += 0.01 * rng.standard_normal(img.shape)
    return np.clip(img, 0.0, 1.0)
