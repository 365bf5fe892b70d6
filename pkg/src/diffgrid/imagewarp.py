"""Image compaction: a deformable half-resolution pixel grid.

A deformable image is a grid of vertices carrying RGB colors and deformed
positions in [-1,1]^2. Colors at a point come from the barycentric blend
inside the (fixed-diagonal) triangulation of the deformed cells. Compaction
jointly optimizes colors (plain per-color Adam, clamped) and positions
(convex-sum differential weights on the alternating schedule) against
stochastic samples of the target, with a decaying Gaussian blur of the
target as preconditioning and the IPC barrier keeping cells injective.

Domain conventions: grid vertices and raster pixel centers both span
[-1, 1] inclusively, i.e. pixel (i, j) of an HxW raster sits at
x = -1 + 2j/(W-1), y = -1 + 2i/(H-1). The 5-channel DGIM serialization is
row-major float32: RGB then the (dx, dy) offsets from the undeformed
lattice.
"""

from __future__ import annotations

import math
import os
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import diffrep, energy, optim
from .complexes import BoundaryConstraint, GridTopology, SimplicialComplex, build_grid
from .coloring import grid_parity_coloring

_BARY_TOL = 1e-9


@dataclass
class RasterImage:
    pixels: np.ndarray  # (H, W, 3) float64 in [0, 1]

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=float)
        if self.pixels.ndim == 2:
            self.pixels = np.repeat(self.pixels[:, :, None], 3, axis=2)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError("raster images are (H, W, 3)")
        if not np.all(np.isfinite(self.pixels)):
            raise ValueError("raster image has non-finite samples")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class DeformableImage:
    """H x W vertex grid with per-vertex color and deformed position."""

    colors: np.ndarray       # (H, W, 3) in [0, 1]
    positions: np.ndarray    # (H*W, 2), vertex id = j + W*i
    _complex: SimplicialComplex | None = field(default=None, repr=False)
    _topology: GridTopology | None = field(default=None, repr=False)
    _constraints: BoundaryConstraint | None = field(default=None, repr=False)

    @property
    def grid_h(self) -> int:
        return self.colors.shape[0]

    @property
    def grid_w(self) -> int:
        return self.colors.shape[1]

    def grid(self):
        if self._complex is None:
            self._complex, self._topology, self._constraints = build_grid(
                (self.grid_w, self.grid_h), dim=2)
        return self._complex, self._topology, self._constraints

    def lattice_positions(self) -> np.ndarray:
        complex_, _, _ = self.grid()
        return complex_.positions

    @classmethod
    def undeformed(cls, colors: np.ndarray) -> "DeformableImage":
        img = cls(colors=np.asarray(colors, dtype=float), positions=None)
        img.positions = img.lattice_positions().copy()
        return img

    def sample_triangles(self) -> np.ndarray:
        """Two triangles per cell, split by the lower-left/upper-right diagonal."""
        w = self.grid_w
        ii, jj = np.meshgrid(np.arange(self.grid_h - 1), np.arange(w - 1),
                             indexing="ij")
        v00 = (jj + w * ii).ravel()
        v10 = v00 + 1
        v01 = v00 + w
        v11 = v01 + 1
        tris = np.empty((len(v00) * 2, 3), dtype=np.int64)
        tris[0::2] = np.stack([v00, v10, v11], axis=1)
        tris[1::2] = np.stack([v00, v11, v01], axis=1)
        return tris


# ---------------------------------------------------------------------------
# DGIM serialization

_DGIM_MAGIC = b"DGIM"


def save_dgim(path, img: DeformableImage) -> None:
    delta = (img.positions - img.lattice_positions()).reshape(
        img.grid_h, img.grid_w, 2)
    payload = np.concatenate([img.colors, delta], axis=2).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_DGIM_MAGIC)
        fh.write(struct.pack("<II", img.grid_h, img.grid_w))
        fh.write(payload.tobytes())


def load_dgim(path) -> DeformableImage:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _DGIM_MAGIC:
            raise ValueError(f"{path}: not a DGIM file")
        h, w = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != h * w * 5:
        raise ValueError(f"{path}: truncated DGIM payload")
    data = data.reshape(h, w, 5).astype(float)
    img = DeformableImage(colors=data[:, :, :3], positions=None)
    img.positions = img.lattice_positions() + data[:, :, 3:].reshape(-1, 2)
    return img


# ---------------------------------------------------------------------------
# point location in the deformed grid

class CellLocator:
    """Uniform-bin index over the deformed sampling triangles.

    Triangle bboxes are scattered into a lattice of bins over [-1,1]^2;
    queries test the candidate triangles of the point's bin by barycentric
    sign. Rebuilt whenever positions change; behavior matches brute force.
    """

    def __init__(self, positions: np.ndarray, triangles: np.ndarray,
                 bins_x: int, bins_y: int):
        self.positions = positions
        self.triangles = triangles
        self.bins_x = bins_x
        self.bins_y = bins_y
        pts = positions[triangles]          # (T, 3, 2)
        lo = pts.min(axis=1)
        hi = pts.max(axis=1)
        ix0 = np.clip(((lo[:, 0] + 1.0) * 0.5 * bins_x).astype(np.int64), 0, bins_x - 1)
        ix1 = np.clip(((hi[:, 0] + 1.0) * 0.5 * bins_x).astype(np.int64), 0, bins_x - 1)
        iy0 = np.clip(((lo[:, 1] + 1.0) * 0.5 * bins_y).astype(np.int64), 0, bins_y - 1)
        iy1 = np.clip(((hi[:, 1] + 1.0) * 0.5 * bins_y).astype(np.int64), 0, bins_y - 1)
        nx = ix1 - ix0 + 1
        ny = iy1 - iy0 + 1
        counts = nx * ny
        total = int(counts.sum())
        tri_ids = np.repeat(np.arange(len(triangles)), counts)
        starts = np.cumsum(counts) - counts
        within = np.arange(total) - np.repeat(starts, counts)
        wx = np.repeat(nx, counts)
        bx = np.repeat(ix0, counts) + within % wx
        by = np.repeat(iy0, counts) + within // wx
        bin_ids = bx + bins_x * by
        order = np.argsort(bin_ids, kind="stable")
        self._tri_by_bin = tri_ids[order]
        self._bin_offsets = np.zeros(bins_x * bins_y + 1, dtype=np.int64)
        np.add.at(self._bin_offsets, bin_ids + 1, 1)
        np.cumsum(self._bin_offsets, out=self._bin_offsets)

    def locate(self, points: np.ndarray):
        """Containing triangle id and barycentric coords per point.

        Raises RuntimeError when a point is covered by no triangle, which
        for in-domain points means the grid lost injectivity.
        """
        pts = np.clip(points, -1.0, 1.0)
        tri, bary = self._locate_once(pts, _BARY_TOL)
        missing = tri < 0
        if missing.any():
            tri2, bary2 = self._locate_brute(pts[missing], 1e-7)
            tri[missing] = tri2
            bary[missing] = bary2
            if np.any(tri < 0):
                raise RuntimeError("sample point not covered by any grid cell")
        return tri, bary

    def _locate_once(self, pts, tol):
        bx = np.clip(((pts[:, 0] + 1.0) * 0.5 * self.bins_x).astype(np.int64),
                     0, self.bins_x - 1)
        by = np.clip(((pts[:, 1] + 1.0) * 0.5 * self.bins_y).astype(np.int64),
                     0, self.bins_y - 1)
        bins = bx + self.bins_x * by
        starts = self._bin_offsets[bins]
        ends = self._bin_offsets[bins + 1]
        counts = ends - starts
        total = int(counts.sum())
        n = len(pts)
        tri_out = np.full(n, -1, dtype=np.int64)
        bary_out = np.zeros((n, 3))
        if total == 0:
            return tri_out, bary_out
        point_ids = np.repeat(np.arange(n), counts)
        offs = np.cumsum(counts) - counts
        within = np.arange(total) - np.repeat(offs, counts)
        cand = self._tri_by_bin[np.repeat(starts, counts) + within]
        bary = _barycentric(self.positions, self.triangles, cand, pts[point_ids])
        valid = np.all(bary >= -tol, axis=1)
        # first valid candidate per point, in candidate order
        first = np.full(n, -1, dtype=np.int64)
        vidx = np.flatnonzero(valid)[::-1]
        first[point_ids[vidx]] = vidx
        hit = first >= 0
        tri_out[hit] = cand[first[hit]]
        bary_out[hit] = bary[first[hit]]
        return tri_out, bary_out

    def _locate_brute(self, pts, tol):
        n = len(pts)
        tri_out = np.full(n, -1, dtype=np.int64)
        bary_out = np.zeros((n, 3))
        for i in range(n):
            bary = _barycentric(self.positions, self.triangles,
                                np.arange(len(self.triangles)),
                                np.repeat(pts[i:i + 1], len(self.triangles), axis=0))
            valid = np.flatnonzero(np.all(bary >= -tol, axis=1))
            if len(valid):
                tri_out[i] = valid[0]
                bary_out[i] = bary[valid[0]]
        return tri_out, bary_out


def _barycentric(positions, triangles, tri_ids, pts):
    """Barycentric coordinates of pts in the given triangles."""
    a = positions[triangles[tri_ids, 0]]
    b = positions[triangles[tri_ids, 1]]
    c = positions[triangles[tri_ids, 2]]
    denom = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) \
        - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    denom = np.where(np.abs(denom) < 1e-300, 1e-300, denom)
    wa = ((b[:, 0] - pts[:, 0]) * (c[:, 1] - pts[:, 1])
          - (b[:, 1] - pts[:, 1]) * (c[:, 0] - pts[:, 0])) / denom
    wb = ((c[:, 0] - pts[:, 0]) * (a[:, 1] - pts[:, 1])
          - (c[:, 1] - pts[:, 1]) * (a[:, 0] - pts[:, 0])) / denom
    wc = 1.0 - wa - wb
    return np.stack([wa, wb, wc], axis=1)


def sample_color(img: DeformableImage, x: float, y: float) -> np.ndarray:
    """Color at one domain point: barycentric blend in the containing triangle."""
    return sample_colors(img, np.array([[x, y]]))[0]


def sample_colors(img: DeformableImage, points: np.ndarray,
                  locator: CellLocator | None = None) -> np.ndarray:
    if locator is None:
        locator = CellLocator(img.positions, img.sample_triangles(),
                              2 * (img.grid_w - 1), 2 * (img.grid_h - 1))
    tri, bary = locator.locate(points)
    flat_colors = img.colors.reshape(-1, 3)
    corner_colors = flat_colors[locator.triangles[tri]]  # (N, 3, 3)
    return np.einsum("nk,nkc->nc", bary, corner_colors)


# ---------------------------------------------------------------------------
# raster utilities

def psnr(a: RasterImage, b: RasterImage) -> float:
    """10 log10(1 / MSE) on [0,1] channels; identical images cap at 99 dB."""
    if (a.height, a.width) != (b.height, b.width):
        raise ValueError("psnr needs matching dimensions")
    mse = float(np.mean((a.pixels - b.pixels) ** 2))
    if mse <= 0.0:
        return 99.0
    return min(10.0 * math.log10(1.0 / mse), 99.0)


def bilinear_resize(img: RasterImage, out_h: int, out_w: int) -> RasterImage:
    """Separable bilinear resampling with half-pixel-center alignment."""
    src = img.pixels
    h, w = img.height, img.width

    def axis_coords(n_out, n_in):
        x = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        x = np.clip(x, 0.0, n_in - 1.0)
        i0 = np.floor(x).astype(np.int64)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, (x - i0)

    r0, r1, fy = axis_coords(out_h, h)
    c0, c1, fx = axis_coords(out_w, w)
    rows = src[r0] * (1.0 - fy)[:, None, None] + src[r1] * fy[:, None, None]
    out = rows[:, c0] * (1.0 - fx)[None, :, None] + rows[:, c1] * fx[None, :, None]
    return RasterImage(out)


def gaussian_blur(img: RasterImage, sigma: float) -> RasterImage:
    """Separable Gaussian, kernel radius ceil(3 sigma), edge-clamped."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0.0:
        return RasterImage(img.pixels.copy())
    from scipy.ndimage import correlate1d

    radius = math.ceil(3.0 * sigma)
    k = np.arange(-radius, radius + 1, dtype=float)
    kernel = np.exp(-(k * k) / (2.0 * sigma * sigma))
    kernel /= kernel.sum()
    out = correlate1d(img.pixels, kernel, axis=0, mode="nearest")
    out = correlate1d(out, kernel, axis=1, mode="nearest")
    return RasterImage(out)


def raster_sample_bilinear(img: RasterImage, points: np.ndarray) -> np.ndarray:
    """Bilinear color of the raster at domain points (centers span [-1,1])."""
    h, w = img.height, img.width
    u = (points[:, 0] + 1.0) * 0.5 * (w - 1)
    v = (points[:, 1] + 1.0) * 0.5 * (h - 1)
    u = np.clip(u, 0.0, w - 1.0)
    v = np.clip(v, 0.0, h - 1.0)
    j0 = np.floor(u).astype(np.int64)
    i0 = np.floor(v).astype(np.int64)
    j1 = np.minimum(j0 + 1, w - 1)
    i1 = np.minimum(i0 + 1, h - 1)
    fu = (u - j0)[:, None]
    fv = (v - i0)[:, None]
    p = img.pixels
    top = p[i0, j0] * (1 - fu) + p[i0, j1] * fu
    bot = p[i1, j0] * (1 - fu) + p[i1, j1] * fu
    return top * (1 - fv) + bot * fv


# ---------------------------------------------------------------------------
# PPM / PNG I/O

def write_ppm(path, img: RasterImage) -> None:
    data = np.clip(np.round(img.pixels * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.width} {img.height}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_ppm(path) -> RasterImage:
    with open(path, "rb") as fh:
        raw = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    if fields[0] != b"P6":
        raise ValueError(f"{path}: only binary P6 PPM is supported")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    pos += 1  # single whitespace after maxval
    data = np.frombuffer(raw[pos:pos + w * h * 3], dtype=np.uint8)
    if data.size != w * h * 3:
        raise ValueError(f"{path}: truncated PPM payload")
    return RasterImage(data.reshape(h, w, 3).astype(float) / maxval)


def read_image(path) -> RasterImage:
    """PPM natively; anything else through Pillow when available."""
    if str(path).lower().endswith(".ppm"):
        return read_ppm(path)
    try:
        from PIL import Image
    except ImportError as exc:
        raise IOError(f"{path}: non-PPM input needs Pillow installed") from exc
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=float) / 255.0
    return RasterImage(arr)


def write_image(path, img: RasterImage) -> None:
    if str(path).lower().endswith(".ppm"):
        write_ppm(path, img)
        return
    try:
        from PIL import Image
    except ImportError as exc:
        raise IOError(f"{path}: non-PPM output needs Pillow installed") from exc
    data = np.clip(np.round(img.pixels * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path)


# ---------------------------------------------------------------------------
# reconstruction

def thread_count() -> int:
    """Worker cap from DIFFGRID_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("DIFFGRID_THREADS", "1")))
    except ValueError:
        return 1


def reconstruct(img: DeformableImage, out_h: int, out_w: int,
                samples_per_cell: int = 32, seed: int = 0) -> RasterImage:
    """Stratified samples per deformed cell, averaged per enclosing pixel.

    Empty pixels copy the nearest sampled pixel. Deterministic for a given
    seed; triangle chunks may be processed by worker threads (DIFFGRID_THREADS)
    but are merged in a fixed order.
    """
    tris = img.sample_triangles()
    per_tri = max(1, (samples_per_cell + 1) // 2)
    k = max(1, math.ceil(math.sqrt(per_tri)))
    flat_colors = img.colors.reshape(-1, 3)

    chunk = 4096
    chunks = [(i, min(i + chunk, len(tris))) for i in range(0, len(tris), chunk)]

    def run_chunk(args):
        idx, (lo, hi) = args
        rng = np.random.default_rng(np.random.SeedSequence([seed, idx]))
        t = tris[lo:hi]
        m = len(t)
        # k x k jittered strata in the unit square, folded onto the triangle
        sx, sy = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
        base = np.stack([sx, sy], axis=-1).reshape(-1, 2)
        u = (base[None, :, :] + rng.random((m, k * k, 2))) / k
        fold = u.sum(axis=2) > 1.0
        u[fold] = 1.0 - u[fold]
        w1 = u[:, :, 0]
        w2 = u[:, :, 1]
        w0 = 1.0 - w1 - w2
        bary = np.stack([w0, w1, w2], axis=2)          # (m, k*k, 3)
        corners = img.positions[t]                     # (m, 3, 2)
        pts = np.einsum("msk,mkd->msd", bary, corners).reshape(-1, 2)
        cols = np.einsum("msk,mkc->msc", bary, flat_colors[t]).reshape(-1, 3)
        px = np.clip(np.round((pts[:, 0] + 1.0) * 0.5 * (out_w - 1)), 0, out_w - 1)
        py = np.clip(np.round((pts[:, 1] + 1.0) * 0.5 * (out_h - 1)), 0, out_h - 1)
        pix = (px + out_w * py).astype(np.int64)
        sums = np.zeros((out_h * out_w, 3))
        for c in range(3):
            sums[:, c] = np.bincount(pix, weights=cols[:, c],
                                     minlength=out_h * out_w)
        counts = np.bincount(pix, minlength=out_h * out_w)
        return sums, counts

    jobs = list(enumerate(chunks))
    workers = thread_count()
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_chunk, jobs))
    else:
        results = [run_chunk(j) for j in jobs]

    sums = np.zeros((out_h * out_w, 3))
    counts = np.zeros(out_h * out_w)
    for s, c in results:
        sums += s
        counts += c

    filled = counts > 0
    out = np.zeros((out_h * out_w, 3))
    out[filled] = sums[filled] / counts[filled, None]
    if not filled.all():
        from scipy.ndimage import distance_transform_edt
        mask = ~filled.reshape(out_h, out_w)
        _, (ri, ci) = distance_transform_edt(mask, return_indices=True)
        img2 = out.reshape(out_h, out_w, 3)
        out = img2[ri, ci].reshape(-1, 3)
    return RasterImage(np.clip(out.reshape(out_h, out_w, 3), 0.0, 1.0))


# ---------------------------------------------------------------------------
# compaction

@dataclass
class CompactConfig:
    iterations: int = 3000            # color steps
    samples_per_step: int = 1 << 14
    color_lr: float = 1e-2
    weight_lr: float = 1e-3
    blur_enabled: bool = True
    blur_fraction: float = 0.6        # share of iterations with nonzero blur
    blur_sigma0_frac: float = 0.02    # of min(target dimension)
    weight_mode: str = diffrep.PER_VERTEX
    seed: int = 0
    validate_every_step: bool = False

    def blur_sigma(self, target: RasterImage, iteration: int) -> float:
        if not self.blur_enabled:
            return 0.0
        sigma0 = self.blur_sigma0_frac * min(target.height, target.width)
        horizon = self.blur_fraction * self.iterations
        if horizon <= 0 or iteration >= horizon:
            return 0.0
        return sigma0 * (1.0 - iteration / horizon)


class _SampleLoss:
    """Mean L1 reconstruction loss over one batch of sample points.

    Presents the ``image_hook`` interface used by the energy module: called
    with candidate positions it locates the fixed batch in the deformed
    grid, returns (value, d/dpositions), and stashes the color gradient for
    the caller.
    """

    def __init__(self, img: DeformableImage, triangles: np.ndarray):
        self.img = img
        self.triangles = triangles
        self.points = None
        self.ref_colors = None
        self.color_grad = None

    def set_batch(self, points: np.ndarray, ref_colors: np.ndarray):
        self.points = points
        self.ref_colors = ref_colors

    def __call__(self, positions: np.ndarray, want_grad: bool = True):
        img = self.img
        locator = CellLocator(positions, self.triangles,
                              2 * (img.grid_w - 1), 2 * (img.grid_h - 1))
        tri, bary = locator.locate(self.points)
        corners = self.triangles[tri]                    # (N, 3)
        flat_colors = img.colors.reshape(-1, 3)
        cur = np.einsum("nk,nkc->nc", bary, flat_colors[corners])
        err = cur - self.ref_colors
        n = len(self.points)
        value = float(np.abs(err).sum()) / n
        if not want_grad:
            return value, None
        sgn = np.sign(err) / n                           # (N, 3)

        # colors: dL/dC[corner] = sgn * bary
        cgrad = np.zeros((img.grid_h * img.grid_w, 3))
        for k in range(3):
            w = bary[:, k][:, None] * sgn
            for c in range(3):
                cgrad[:, c] += np.bincount(corners[:, k], weights=w[:, c],
                                           minlength=cgrad.shape[0])
        self.color_grad = cgrad

        # positions: w_k = A_k / A with A_k the sub-area at the fixed point,
        # so dw_k/dv = (dA_k/dv - w_k dA/dv) / A for every triangle corner v
        grad = np.zeros_like(positions)
        a = positions[corners[:, 0]]
        b = positions[corners[:, 1]]
        c = positions[corners[:, 2]]
        p = self.points
        area2 = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) \
            - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
        inv_a = 2.0 / np.where(np.abs(area2) < 1e-300, 1e-300, area2)
        gw = np.einsum("nc,nkc->nk", sgn, flat_colors[corners])  # dL/dw_k
        s = np.einsum("nk,nk->n", gw, bary)

        def perp(v):
            return np.stack([v[:, 1], -v[:, 0]], axis=1)

        half = 0.5 * inv_a[:, None]
        g_a = half * (gw[:, 1:2] * perp(p - c) + gw[:, 2:3] * perp(b - p)
                      - s[:, None] * perp(b - c))
        g_b = half * (gw[:, 0:1] * perp(c - p) + gw[:, 2:3] * perp(p - a)
                      - s[:, None] * perp(c - a))
        g_c = half * (gw[:, 0:1] * perp(p - b) + gw[:, 1:2] * perp(a - p)
                      - s[:, None] * perp(a - b))
        for k, g in enumerate((g_a, g_b, g_c)):
            for d in range(2):
                grad[:, d] += np.bincount(corners[:, k], weights=g[:, d],
                                          minlength=len(positions))
        return value, grad


def compact(target: RasterImage, grid_h: int, grid_w: int,
            config: CompactConfig | None = None) -> tuple[DeformableImage, list]:
    """Optimize a deformable image against the target; returns (image, reports).

    Per color step: draw sample points, fit the (blur-scheduled) target with
    the mean L1 loss plus the IPC barrier over the 4-triangle cell
    subdivision, update the active class's colors (Adam, clamped to [0,1])
    and differential weights, then recompute positions and roll back any
    inversion.
    """
    if grid_h < 2 or grid_w < 2:
        raise ValueError("deformable grids need at least 2x2 vertices")
    if target.height < 1 or target.width < 1:
        raise ValueError("empty target image")
    config = config or CompactConfig()

    img = DeformableImage.undeformed(np.zeros((grid_h, grid_w, 3)))
    complex_, topo, constraints = img.grid()
    coloring = grid_parity_coloring(topo)
    positions = complex_.positions.copy()

    d_hat = 1e-10 / math.sqrt(grid_h * grid_w)
    barrier = energy.BarrierSpec(enabled=True, d_hat=d_hat, linear_scale=1.0)
    spec = energy.EnergySpec(kind=energy.IMAGE_L1, barrier=barrier)

    sampler = _SampleLoss(img, img.sample_triangles())
    reference = energy.ReferenceGeometry(image_hook=sampler)

    weights = diffrep.DifferentialWeights.ones(complex_, config.weight_mode)
    plans = [diffrep.ColorPlan.build(complex_, rows) for rows in coloring.members]
    w_adam = [optim.AdamState(weights.raw[p.entry_idx].shape, config.weight_lr)
              for p in plans]
    c_adam = [optim.AdamState((len(p.rows), 3), config.color_lr) for p in plans]

    rng = np.random.default_rng(config.seed)

    # init colors from the (blurred) target at the vertex lattice
    sigma = config.blur_sigma(target, 0)
    blurred = gaussian_blur(target, sigma)
    img.colors[:] = raster_sample_bilinear(blurred, positions).reshape(
        grid_h, grid_w, 3)
    last_sigma = sigma

    reports = []
    for it in range(config.iterations):
        t0 = time.perf_counter()
        color = it % coloring.color_count
        plan = plans[color]

        sigma = config.blur_sigma(target, it)
        if abs(sigma - last_sigma) > 0.05 or (sigma == 0.0) != (last_sigma == 0.0):
            blurred = gaussian_blur(target, sigma)
            last_sigma = sigma

        pts = rng.uniform(-1.0, 1.0, size=(config.samples_per_step, 2))
        sampler.set_batch(pts, raster_sample_bilinear(blurred, pts))

        fwd, cache = diffrep.forward_active(complex_, weights, plan, positions,
                                            constraints)
        lval, bval, grad_pos = energy.total_value_grad(spec, fwd, reference,
                                                       complex_)
        if grad_pos is None:
            raise RuntimeError("non-finite compaction energy")
        grad_raw = diffrep.backward_active(weights, cache, grad_pos, constraints)
        weights.raw[plan.entry_idx] += w_adam[color].step(grad_raw)

        cflat = img.colors.reshape(-1, 3)
        cflat[plan.rows] = np.clip(
            cflat[plan.rows] + c_adam[color].step(sampler.color_grad[plan.rows]),
            0.0, 1.0)

        candidate, _ = diffrep.forward_active(complex_, weights, plan, positions,
                                              constraints)
        inv = optim.detect_inversions(complex_, candidate)
        resets = 0
        if len(inv):
            candidate, resets = optim.reset_inverted(complex_, candidate,
                                                     positions, inv)
        if config.validate_every_step:
            assert len(optim.detect_inversions(complex_, candidate)) == 0
        positions = candidate
        reports.append(optim.StepReport(iteration=it, color=color, energy=lval,
                                        barrier=bval, inverted=len(inv),
                                        resets=resets,
                                        wall_time=time.perf_counter() - t0))

    img.positions = positions
    return img, reports
