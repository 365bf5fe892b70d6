import math

import numpy as np
import pytest

from diffgrid import energy
from diffgrid.complexes import (BoundaryConstraint, apply_boundary, build_grid,
                                mesh_complex)
from diffgrid.energy import (BarrierSpec, EnergySpec, barrier_energy, eval_toy,
                             eval_uv_energy, ipc_barrier,
                             jacobian_singular_values, reference_for_toy,
                             reference_for_uv, triangle_quantities)


def single_free_vertex_setup(position):
    """3x3 grid with every vertex pinned except the center."""
    complex_, topo, bc = build_grid((3, 3), 2)
    bc = BoundaryConstraint(pinned_mask=np.ones((9, 2), dtype=bool),
                            pinned_values=complex_.positions.copy(),
                            on_circle=np.zeros(9, dtype=bool))
    center = int(topo.vertex_index(np.array([1, 1])))
    bc.pinned_mask[center] = False
    pos = complex_.positions.copy()
    pos[center] = position
    return complex_, bc, pos


class TestToy:
    def test_lx_single_free_vertex(self):
        complex_, bc, pos = single_free_vertex_setup((0.3, 0.7))
        ref = reference_for_toy(complex_, bc)
        assert eval_toy(EnergySpec(kind=energy.LX), pos, ref) == pytest.approx(0.3)

    def test_lxy_at_origin_is_minimum(self):
        complex_, bc, pos = single_free_vertex_setup((0.0, 0.0))
        ref = reference_for_toy(complex_, bc)
        assert eval_toy(EnergySpec(kind=energy.LXY), pos, ref) == 0.0

    def test_lspin_at_init(self):
        # every counted vertex on a 4x4 grid has nonzero radius, so the mean
        # is exactly the squared 175-degree target
        complex_, _, bc = build_grid((4, 4), 2)
        ref = reference_for_toy(complex_, bc)
        val = eval_toy(EnergySpec(kind=energy.LSPIN), complex_.positions, ref)
        assert val == pytest.approx(math.radians(175.0) ** 2, abs=1e-12)

    def test_lspin_origin_vertex_radius_term_only(self):
        # odd grid: center vertex starts at the origin, angle undefined
        complex_, topo, bc = build_grid((3, 3), 2)
        ref = reference_for_toy(complex_, bc)
        center = int(topo.vertex_index(np.array([1, 1])))
        assert not ref.angle_defined[center]
        pos = complex_.positions.copy()
        pos[center] = (0.1, 0.0)
        spec = EnergySpec(kind=energy.LSPIN)
        counted = int((~bc.fully_pinned()).sum())
        base = eval_toy(spec, complex_.positions, ref)
        moved = eval_toy(spec, pos, ref)
        assert moved - base == pytest.approx(0.1 ** 2 / counted)

    def test_lspin_global_rotation_invariant(self, rng):
        complex_, _, bc = build_grid((5, 5), 2)
        spec = EnergySpec(kind=energy.LSPIN)
        pos = apply_boundary(
            complex_.positions + 0.05 * rng.standard_normal((25, 2)), bc)
        ref = reference_for_toy(complex_, bc)
        val = eval_toy(spec, pos, ref)
        ang = 0.7
        rot = np.array([[math.cos(ang), -math.sin(ang)],
                        [math.sin(ang), math.cos(ang)]])
        rotated = type(complex_)(dim=2, positions=complex_.positions @ rot.T,
                                 simplices=complex_.simplices,
                                 adj_offsets=complex_.adj_offsets,
                                 adj_indices=complex_.adj_indices,
                                 cells=complex_.cells)
        ref_rot = reference_for_toy(rotated, bc)
        val_rot = eval_toy(spec, pos @ rot.T, ref_rot)
        assert val_rot == pytest.approx(val, rel=1e-9)


class TestTriangleQuantities:
    def test_equilateral(self):
        angles, area = triangle_quantities((0, 0), (1, 0), (0.5, math.sqrt(3) / 2))
        assert np.allclose(angles, math.pi / 3)
        assert area == pytest.approx(math.sqrt(3) / 4)

    def test_right_isoceles(self):
        angles, area = triangle_quantities((0, 0), (1, 0), (0, 1))
        assert angles[0] == pytest.approx(math.pi / 2)
        assert angles[1] == pytest.approx(math.pi / 4)
        assert angles[2] == pytest.approx(math.pi / 4)
        assert area == pytest.approx(0.5)

    def test_collinear(self):
        angles, area = triangle_quantities((0, 0), (1, 0), (2, 0))
        assert area == 0.0
        assert angles.sum() == pytest.approx(math.pi)

    def test_zero_length_edge(self):
        angles, area = triangle_quantities((0, 0), (0, 0), (1, 1))
        assert area == 0.0
        assert angles.sum() == pytest.approx(math.pi)

    def test_angles_sum_to_pi(self, rng):
        for _ in range(100):
            pts = rng.standard_normal((3, 2))
            angles, _ = triangle_quantities(*pts)
            assert angles.sum() == pytest.approx(math.pi, abs=1e-9)


class TestJacobianSingularValues:
    def test_identity(self):
        tri = np.array([[0, 0], [1, 0], [0, 1]], dtype=float)
        s1, s2 = jacobian_singular_values(tri, tri)
        assert (s1, s2) == (pytest.approx(1.0), pytest.approx(1.0))

    def test_uniform_scale(self):
        tri = np.array([[0, 0], [1, 0], [0.3, 0.8]])
        s1, s2 = jacobian_singular_values(tri, 2.5 * tri)
        assert s1 == pytest.approx(2.5)
        assert s2 == pytest.approx(2.5)

    def test_anisotropic_stretch(self):
        rest = np.array([[0, 0], [1, 0], [0, 1]], dtype=float)
        uv = np.array([[0, 0], [2, 0], [0, 1]], dtype=float)
        s1, s2 = jacobian_singular_values(rest, uv)
        assert s1 == pytest.approx(2.0)
        assert s2 == pytest.approx(1.0)

    def test_degenerate_rest_rejected(self):
        rest = np.array([[0, 0], [1, 0], [2, 0]], dtype=float)
        with pytest.raises(ValueError):
            jacobian_singular_values(rest, rest)


def flat_mesh(tris_uv):
    """A planar mesh used as its own 3D rest shape (z = 0)."""
    pts = np.unique(np.concatenate(tris_uv), axis=0)
    index = {tuple(p): i for i, p in enumerate(pts)}
    tris = np.array([[index[tuple(p)] for p in t] for t in tris_uv])
    pos3 = np.concatenate([pts, np.zeros((len(pts), 1))], axis=1)
    return pos3, pts.astype(float), tris


class TestUVEnergies:
    def test_congruent_angle_preserving_zero(self):
        pos3, uv, tris = flat_mesh([
            np.array([[0, 0], [1, 0], [0, 1]], dtype=float),
            np.array([[1, 0], [1, 1], [0, 1]], dtype=float)])
        ref = reference_for_uv(pos3, tris)
        val = eval_uv_energy(EnergySpec(kind=energy.ANGLE_PRESERVING), ref, uv, tris)
        assert val == pytest.approx(0.0, abs=1e-12)

    def test_congruent_triangles_equiareal_zero(self):
        pos3, uv, tris = flat_mesh([
            np.array([[0, 0], [1, 0], [0, 1]], dtype=float),
            np.array([[1, 0], [1, 1], [0, 1]], dtype=float)])
        ref = reference_for_uv(pos3, tris)
        val = eval_uv_energy(EnergySpec(kind=energy.EQUIAREAL), ref, uv, tris)
        assert val == pytest.approx(0.0, abs=1e-15)

    def test_identity_sym_dirichlet_is_four_area(self):
        tri = np.array([[0, 0], [1, 0], [0.2, 0.9]], dtype=float)
        pos3, uv, tris = flat_mesh([tri])
        ref = reference_for_uv(pos3, tris)
        val = eval_uv_energy(EnergySpec(kind=energy.SYMMETRIC_DIRICHLET), ref, uv, tris)
        area = ref.rest_areas[0]
        assert val == pytest.approx(4.0 * area, rel=1e-12)

    def test_sym_dirichlet_degenerate_is_infinite(self):
        pos3 = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float)
        tris = np.array([[0, 1, 2]])
        ref = reference_for_uv(pos3, tris)
        collinear = np.array([[0, 0], [1, 0], [0.5, 0]], dtype=float)
        val = eval_uv_energy(EnergySpec(kind=energy.SYMMETRIC_DIRICHLET), ref,
                             collinear, tris)
        assert math.isinf(val)

    def test_equilateral_zero_iff_equilateral(self, rng):
        spec = EnergySpec(kind=energy.EQUILATERAL)
        eq = np.array([[0, 0], [1, 0], [0.5, math.sqrt(3) / 2]])
        pos3, uv, tris = flat_mesh([eq])
        ref = reference_for_uv(pos3, tris)
        assert eval_uv_energy(spec, ref, uv, tris) == pytest.approx(0.0, abs=1e-9)
        for _ in range(20):
            skew = uv + 0.1 * rng.standard_normal(uv.shape)
            angles = energy.triangle_angles(skew, tris)
            if np.abs(angles - math.pi / 3).max() > 1e-6:
                assert eval_uv_energy(spec, ref, skew, tris) > 1e-8

    def test_sym_dirichlet_invariances(self, rng):
        tri3d = rng.standard_normal((3, 3))
        uv = rng.standard_normal((3, 2))
        tris = np.array([[0, 1, 2]])
        spec = EnergySpec(kind=energy.SYMMETRIC_DIRICHLET)
        ref = reference_for_uv(tri3d, tris)
        base = eval_uv_energy(spec, ref, uv, tris)
        ang = 1.1
        rot = np.array([[math.cos(ang), -math.sin(ang)],
                        [math.sin(ang), math.cos(ang)]])
        assert eval_uv_energy(spec, ref, uv @ rot.T, tris) == pytest.approx(base, rel=1e-9)
        # relabeling rest vertices (with matching uv labels) changes nothing
        perm = [1, 2, 0]
        ref_p = reference_for_uv(tri3d[perm], tris)
        assert eval_uv_energy(spec, ref_p, uv[perm], tris) == pytest.approx(base, rel=1e-9)


class TestBarrier:
    def test_value_at_threshold(self):
        assert ipc_barrier(1e-3, 1e-3) == 0.0

    def test_value_above_threshold(self):
        assert ipc_barrier(2e-3, 1e-3) == 0.0

    def test_value_inside(self):
        d_hat = 0.25
        expected = (d_hat ** 2 / 4.0) * math.log(2.0)
        assert ipc_barrier(d_hat / 2, d_hat) == pytest.approx(expected, rel=1e-12)

    def test_inverted_is_infinite(self):
        assert math.isinf(ipc_barrier(0.0, 1e-3))
        assert math.isinf(ipc_barrier(-1.0, 1e-3))

    def test_monotone_and_smooth_at_threshold(self):
        d_hat = 1e-2
        d = np.linspace(1e-6, d_hat, 500)
        vals = ipc_barrier(d, d_hat)
        assert (np.diff(vals) <= 1e-15).all()
        assert (vals >= 0).all()
        # C1 at the threshold: one-sided derivative goes to zero
        h = 1e-7
        left = (ipc_barrier(d_hat - h, d_hat) - ipc_barrier(d_hat - 2 * h, d_hat)) / h
        assert abs(left) < 1e-5

    def test_invalid_threshold(self):
        with pytest.raises(ValueError):
            ipc_barrier(0.5, 0.0)

    def test_fresh_grid_zero(self):
        complex_, _, _ = build_grid((8, 8), 2)
        d_hat = 1e-10 / math.sqrt(64)
        assert barrier_energy(complex_, BarrierSpec(d_hat=d_hat)) == 0.0

    def test_squeezed_simplex_contribution(self):
        # one triangle at measure d_hat/2 adds the log term plus the linear push
        tris = np.array([[0, 1, 2]])
        d_hat = 0.02
        base = 1.0
        h = 2.0 * base
        pts = np.array([[0, 0], [1, 0], [0, h]], dtype=float)
        cx = mesh_complex(pts, tris)
        spec = BarrierSpec(d_hat=d_hat, linear_scale=1.0)
        assert barrier_energy(cx, spec) == 0.0
        pts_sq = pts.copy()
        pts_sq[2, 1] = d_hat  # area = d_hat / 2
        val = barrier_energy(cx, spec, pts_sq)
        expected = (d_hat ** 2 / 4.0) * math.log(2.0) + 1.0 * (1.5 * d_hat)
        assert val == pytest.approx(expected, rel=1e-12)

    def test_inverted_simplex_infinite(self):
        tris = np.array([[0, 2, 1]])
        pts = np.array([[0, 0], [1, 0], [0, 1]], dtype=float)
        cx = mesh_complex(pts, tris)
        cx = type(cx)(dim=2, positions=pts, simplices=tris,
                      adj_offsets=cx.adj_offsets, adj_indices=cx.adj_indices)
        assert math.isinf(barrier_energy(cx, BarrierSpec(d_hat=1e-3)))
