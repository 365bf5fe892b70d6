"""Command line front end: toy grid demos, UV pipeline, image compaction.

Every command writes a ``manifest.json`` under the run directory with the
full config snapshot, seed, paths, wall time and final metrics, so a run can
be reproduced exactly. Exit codes: 0 ok, 2 usage, 3 input topology,
4 I/O, 5 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import diffrep, energy, imagewarp, optim, uv
from .complexes import build_grid
from .coloring import grid_parity_coloring

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_TOPOLOGY = 3
EXIT_IO = 4
EXIT_NUMERIC = 5

_UV_ENERGIES = {
    "angle-preserving": energy.ANGLE_PRESERVING,
    "area-preserving": energy.AREA_PRESERVING,
    "sym-dirichlet": energy.SYMMETRIC_DIRICHLET,
    "equilateral": energy.EQUILATERAL,
    "equiareal": energy.EQUIAREAL,
}


class RunManifest:
    """Reproducibility record written alongside every command's artifacts."""

    def __init__(self, command: str, config: dict, seed: int,
                 inputs: list[str], out_dir: Path):
        self.data = {
            "command": command,
            "config": config,
            "seed": seed,
            "inputs": inputs,
            "outputs": [],
            "wall_time": None,
            "metrics": {},
            "status": "running",
        }
        self.out_dir = out_dir
        self._t0 = time.perf_counter()

    def add_output(self, path):
        self.data["outputs"].append(str(path))

    def finish(self, status: str, **metrics):
        self.data["status"] = status
        self.data["metrics"].update(metrics)
        self.data["wall_time"] = time.perf_counter() - self._t0
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / "manifest.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if dataclasses.is_dataclass(obj):
        return dataclasses.asdict(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


def write_reports_csv(path, reports):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(optim.StepReport.CSV_HEADER + "\n")
        for r in reports:
            fh.write(r.csv_row() + "\n")


def write_grid_svg(path, complex_, positions, size: int = 640):
    """Deterministic wireframe of the grid edges, domain [-1,1]^2."""
    margin = 10
    scale = (size - 2 * margin) / 2.0

    def to_px(p):
        return (margin + (p[0] + 1.0) * scale, margin + (1.0 - p[1]) * scale)

    src = np.repeat(np.arange(complex_.vertex_count), complex_.degrees())
    dst = complex_.adj_indices
    keep = src < dst
    lines = []
    for a, b in zip(src[keep], dst[keep]):
        x1, y1 = to_px(positions[a])
        x2, y2 = to_px(positions[b])
        lines.append(f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" '
                     f'y2="{y2:.2f}"/>')
    body = "\n".join(lines)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" '
            f'height="{size}" viewBox="0 0 {size} {size}">\n'
            f'<g stroke="#1f4e79" stroke-width="0.6" fill="none">\n'
            f"{body}\n</g>\n</svg>\n")


def _config_snapshot(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


# ---------------------------------------------------------------------------
# commands

def cmd_toy(args) -> int:
    out = Path(args.out)
    manifest = RunManifest("toy", _config_snapshot(args), args.seed,
                           [], out)
    try:
        complex_, topo, constraints = build_grid((args.res, args.res), dim=2)
        coloring = grid_parity_coloring(topo)
        kind = {"x": energy.LX, "xy": energy.LXY, "spin": energy.LSPIN}[args.loss]
        barrier = energy.BarrierSpec(enabled=not args.no_checks)
        spec = energy.EnergySpec(kind=kind, barrier=barrier)
        config = optim.OptConfig(
            iterations=args.iters,
            lr=args.lr,
            mode=optim.LINE_SEARCH if args.mode == "line-search" else optim.ALTERNATING,
            weight_mode=diffrep.PER_DIMENSION if args.per_dimension else diffrep.PER_VERTEX,
            parameterization=optim.DIRECT if args.direct else optim.CONVEX,
            checks_enabled=not args.no_checks,
            seed=args.seed,
            init_jitter=args.jitter,
        )
        if config.mode == optim.LINE_SEARCH:
            result = optim.line_search_optimize(complex_, spec, config, constraints)
        else:
            result = optim.alternating_optimize(complex_, None, coloring, spec,
                                                config, constraints)
        out.mkdir(parents=True, exist_ok=True)
        svg = out / "grid.svg"
        write_grid_svg(svg, complex_, result.positions)
        manifest.add_output(svg)
        csv = out / "loss.csv"
        write_reports_csv(csv, result.reports)
        manifest.add_output(csv)
        manifest.finish("ok", final_loss=result.final_loss,
                        final_barrier=result.final_barrier,
                        injective=result.injective,
                        skipped_steps=result.skipped_steps,
                        optimizer_seconds=result.wall_time)
        return EXIT_OK
    except (ValueError, RuntimeError, FloatingPointError) as exc:
        manifest.finish("numeric-error", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def cmd_uv(args) -> int:
    out = Path(args.out)
    manifest = RunManifest("uv", _config_snapshot(args), args.seed,
                           [args.input], out)
    try:
        mesh = uv.load_obj(args.input)
    except (uv.MeshFormatError, uv.NotADiskError) as exc:
        manifest.finish("topology-error", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TOPOLOGY
    except OSError as exc:
        manifest.finish("io-error", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        config = optim.OptConfig(
            iterations=args.iters,
            lr=args.lr,
            parameterization=optim.DIRECT if args.direct else optim.CONVEX,
            seed=args.seed,
            init_jitter=args.jitter,
        )
        uv_pos, result = uv.optimize_uv(mesh, _UV_ENERGIES[args.energy], config)
        out.mkdir(parents=True, exist_ok=True)
        obj_path = out / "mesh_uv.obj"
        uv.save_obj(obj_path, mesh, uv_pos)
        manifest.add_output(obj_path)
        hist_path = out / "histograms.csv"
        with open(hist_path, "w", encoding="utf-8") as fh:
            fh.write("kind,bin_low,bin_high,count\n")
            for kind, lo, hi, count in uv.histogram_report(uv_pos, mesh):
                fh.write(f"{kind},{lo:.9g},{hi:.9g},{count}\n")
        manifest.add_output(hist_path)
        csv = out / "energy.csv"
        write_reports_csv(csv, result.reports)
        manifest.add_output(csv)
        manifest.finish("ok", final_loss=result.final_loss,
                        final_barrier=result.final_barrier,
                        injective=result.injective,
                        optimizer_seconds=result.wall_time)
        return EXIT_OK
    except uv.NotADiskError as exc:
        manifest.finish("topology-error", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TOPOLOGY
    except (ValueError, RuntimeError) as exc:
        manifest.finish("numeric-error", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def cmd_compact(args) -> int:
    out = Path(args.out)
    manifest = RunManifest("compact", _config_snapshot(args), args.seed,
                           [args.input], out)
    try:
        target = imagewarp.read_image(args.input)
    except (OSError, ValueError) as exc:
        manifest.finish("io-error", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        grid_h = max(2, round(target.height * args.scale))
        grid_w = max(2, round(target.width * args.scale))
        config = imagewarp.CompactConfig(
            iterations=args.iters,
            samples_per_step=args.samples,
            blur_enabled=not args.no_blur,
            seed=args.seed,
        )
        img, reports = imagewarp.compact(target, grid_h, grid_w, config)
        out.mkdir(parents=True, exist_ok=True)
        dgim = out / "image.dgim"
        imagewarp.save_dgim(dgim, img)
        manifest.add_output(dgim)
        csv = out / "loss.csv"
        write_reports_csv(csv, reports)
        manifest.add_output(csv)
        manifest.finish("ok", grid_h=grid_h, grid_w=grid_w,
                        final_sample_loss=reports[-1].energy if reports else None)
        return EXIT_OK
    except (ValueError, RuntimeError) as exc:
        manifest.finish("numeric-error", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def cmd_reconstruct(args) -> int:
    out = Path(args.out)
    manifest = RunManifest("reconstruct", _config_snapshot(args), args.seed,
                           [args.input], out)
    try:
        img = imagewarp.load_dgim(args.input)
    except (OSError, ValueError) as exc:
        manifest.finish("io-error", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        out_h = args.height or img.grid_h
        out_w = args.width or img.grid_w
        raster = imagewarp.reconstruct(img, out_h, out_w,
                                       samples_per_cell=args.samples_per_cell,
                                       seed=args.seed)
        out.mkdir(parents=True, exist_ok=True)
        ppm = out / "reconstructed.ppm"
        imagewarp.write_ppm(ppm, raster)
        manifest.add_output(ppm)
        manifest.finish("ok", out_h=out_h, out_w=out_w)
        return EXIT_OK
    except (ValueError, RuntimeError) as exc:
        manifest.finish("numeric-error", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def cmd_eval(args) -> int:
    out = Path(args.out)
    manifest = RunManifest("eval", _config_snapshot(args), args.seed,
                           [args.target, args.dgim], out)
    try:
        target = imagewarp.read_image(args.target)
        img = imagewarp.load_dgim(args.dgim)
    except (OSError, ValueError) as exc:
        manifest.finish("io-error", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        rows = []
        t0 = time.perf_counter()
        recon = imagewarp.reconstruct(img, target.height, target.width,
                                      samples_per_cell=args.samples_per_cell,
                                      seed=args.seed)
        deform_db = imagewarp.psnr(recon, target)
        rows.append(("deform", deform_db, time.perf_counter() - t0))
        t0 = time.perf_counter()
        down = imagewarp.bilinear_resize(target, img.grid_h, img.grid_w)
        up = imagewarp.bilinear_resize(down, target.height, target.width)
        bilinear_db = imagewarp.psnr(up, target)
        rows.append(("bilinear", bilinear_db, time.perf_counter() - t0))
        out.mkdir(parents=True, exist_ok=True)
        csv = out / "metrics.csv"
        name = Path(args.target).name
        with open(csv, "w", encoding="utf-8") as fh:
            fh.write("image,method,psnr_db,seconds\n")
            for method, db, secs in rows:
                fh.write(f"{name},{method},{db:.4f},{secs:.3f}\n")
        manifest.add_output(csv)
        manifest.finish("ok", deform_psnr=deform_db, bilinear_psnr=bilinear_db)
        return EXIT_OK
    except (ValueError, RuntimeError) as exc:
        manifest.finish("numeric-error", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffgrid",
        description="Inversion-free differential grid and mesh deformation")
    sub = parser.add_subparsers(dest="command", required=True)

    toy = sub.add_parser("toy", help="2D grid deformation demos")
    toy.add_argument("--loss", choices=("x", "xy", "spin"), required=True)
    toy.add_argument("--res", type=int, default=16, help="grid vertices per axis")
    toy.add_argument("--iters", type=int, default=2000, help="color steps")
    toy.add_argument("--lr", type=float, default=1e-3)
    toy.add_argument("--seed", type=int, default=0)
    toy.add_argument("--jitter", type=float, default=0.0,
                     help="seeded noise on the initial parameters")
    toy.add_argument("--per-dimension", action="store_true",
                     help="independent weights per spatial axis")
    toy.add_argument("--direct", action="store_true",
                     help="optimize vertex offsets instead of convex weights")
    toy.add_argument("--mode", choices=("alternating", "line-search"),
                     default="alternating")
    toy.add_argument("--no-checks", action="store_true",
                     help="disable inversion checks and the barrier")
    toy.add_argument("--out", required=True)
    toy.set_defaults(func=cmd_toy)

    uvp = sub.add_parser("uv", help="UV-optimize a disk-topology OBJ")
    uvp.add_argument("input")
    uvp.add_argument("--energy", choices=sorted(_UV_ENERGIES), required=True)
    uvp.add_argument("--iters", type=int, default=3000, help="color steps")
    uvp.add_argument("--lr", type=float, default=1e-3)
    uvp.add_argument("--seed", type=int, default=0)
    uvp.add_argument("--jitter", type=float, default=0.0)
    uvp.add_argument("--direct", action="store_true")
    uvp.add_argument("--out", required=True)
    uvp.set_defaults(func=cmd_uv)

    comp = sub.add_parser("compact", help="compact an image onto a deformable grid")
    comp.add_argument("input")
    comp.add_argument("--scale", type=float, default=0.5,
                      help="grid resolution as a fraction of the image")
    comp.add_argument("--iters", type=int, default=3000, help="color steps")
    comp.add_argument("--samples", type=int, default=1 << 14,
                      help="sample points per step")
    comp.add_argument("--no-blur", action="store_true",
                      help="disable the blur preconditioning schedule")
    comp.add_argument("--seed", type=int, default=0)
    comp.add_argument("--out", required=True)
    comp.set_defaults(func=cmd_compact)

    rec = sub.add_parser("reconstruct", help="render a DGIM back to a raster")
    rec.add_argument("input")
    rec.add_argument("--height", type=int, default=None)
    rec.add_argument("--width", type=int, default=None)
    rec.add_argument("--samples-per-cell", type=int, default=32)
    rec.add_argument("--seed", type=int, default=0)
    rec.add_argument("--out", required=True)
    rec.set_defaults(func=cmd_reconstruct)

    ev = sub.add_parser("eval", help="PSNR of deform vs bilinear against a target")
    ev.add_argument("target")
    ev.add_argument("dgim")
    ev.add_argument("--samples-per-cell", type=int, default=32)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
