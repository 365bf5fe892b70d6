import itertools

import numpy as np
import pytest

from diffgrid.complexes import (apply_boundary, build_grid, in_kernel,
                                signed_area, signed_measures, signed_volume,
                                subdivide_cell_2d, subdivide_cell_3d,
                                BoundaryConstraint, DegenerateProjectionError)
from conftest import kernel_oracle, random_star_ring


class TestBuildGrid:
    def test_3x3_counts(self):
        complex_, topo, bc = build_grid((3, 3), 2)
        assert complex_.vertex_count == 9
        assert len(complex_.cells) == 4
        boundary = bc.pinned_mask.any(axis=1)
        assert boundary.sum() == 8
        center = topo.vertex_index(np.array([1, 1]))
        assert np.allclose(complex_.positions[center], [0.0, 0.0])
        assert len(complex_.neighbors(center)) == 4

    def test_2x2x2(self):
        complex_, topo, bc = build_grid((2, 2, 2), 3)
        assert complex_.vertex_count == 8
        assert len(complex_.cells) == 1
        assert bc.pinned_mask.any(axis=1).all()

    def test_too_small_resolution(self):
        with pytest.raises(ValueError):
            build_grid((1, 3), 2)

    def test_positions_span_unit_box(self):
        complex_, _, _ = build_grid((4, 5), 2)
        assert complex_.positions.min() == -1.0
        assert complex_.positions.max() == 1.0

    def test_corner_pins_both_axes(self):
        _, topo, bc = build_grid((4, 4), 2)
        corner = topo.vertex_index(np.array([0, 3]))
        assert bc.pinned_mask[corner].all()
        assert np.allclose(bc.pinned_values[corner], [-1.0, 1.0])

    def test_fresh_grid_simplices_positive(self):
        for res in [(3, 3), (4, 6), (2, 2, 2), (3, 4, 2)]:
            complex_, _, _ = build_grid(res, len(res))
            assert (signed_measures(complex_) > 0).all()


class TestSignedMeasures:
    def test_area_unit_right_triangle(self):
        assert signed_area((0, 0), (1, 0), (0, 1)) == pytest.approx(0.5)

    def test_area_orientation_flip(self):
        assert signed_area((0, 0), (0, 1), (1, 0)) == pytest.approx(-0.5)

    def test_area_collinear(self):
        assert signed_area((0, 0), (1, 1), (2, 2)) == 0.0

    def test_volume_unit_tet(self):
        v = signed_volume((0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1))
        assert v == pytest.approx(1.0 / 6.0)

    def test_volume_coplanar(self):
        v = signed_volume((0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0))
        assert v == 0.0

    def test_volume_swap_orientation(self):
        v = signed_volume((0, 0, 0), (0, 1, 0), (1, 0, 0), (0, 0, 1))
        assert v == pytest.approx(-1.0 / 6.0)

    def test_permutation_parity(self, rng):
        # even permutations preserve, odd permutations flip the sign
        pts2 = rng.standard_normal((3, 2))
        base2 = signed_area(*pts2)
        for perm in itertools.permutations(range(3)):
            sign = 1 if perm in ((0, 1, 2), (1, 2, 0), (2, 0, 1)) else -1
            assert signed_area(*pts2[list(perm)]) == pytest.approx(sign * base2)
        pts3 = rng.standard_normal((4, 3))
        base3 = signed_volume(*pts3)
        for perm in itertools.permutations(range(4)):
            sign = 1
            p = list(perm)
            for i in range(4):          # parity by counting inversions
                for j in range(i + 1, 4):
                    if p[i] > p[j]:
                        sign = -sign
            assert signed_volume(*pts3[p]) == pytest.approx(sign * base3)


class TestSubdivision:
    unit_square = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)

    def test_quad_four_triangles_positive(self):
        tris = subdivide_cell_2d(np.arange(4))
        assert sorted(map(tuple, tris)) == sorted(
            [(0, 1, 2), (0, 2, 3), (0, 1, 3), (1, 2, 3)])
        for t in tris:
            p = self.unit_square[t]
            assert signed_area(*p) > 0

    def test_quad_degenerate_corner(self):
        pts = self.unit_square.copy()
        pts[1] = pts[0]
        areas = [signed_area(*pts[t]) for t in subdivide_cell_2d(np.arange(4))]
        assert min(abs(a) for a in areas) == 0.0

    def test_quad_corner_across_diagonal(self):
        # pull corner 0 across the 1-3 diagonal: the triangle joining the
        # moved corner to the crossed diagonal flips, and only that one;
        # the other diagonal's split still covers the quad positively, which
        # is exactly the fold the 4-triangle subdivision exists to detect
        pts = self.unit_square.copy()
        pts[0] = (0.8, 0.8)
        tris = subdivide_cell_2d(np.arange(4))
        areas = np.array([signed_area(*pts[t]) for t in tris])
        flipped = {tuple(t) for t, a in zip(tris, areas) if a < 0}
        assert flipped == {(0, 1, 3)}

    def test_cube_ten_tets_partition(self):
        cube = np.array(list(np.ndindex(2, 2, 2)), dtype=float)
        # two-stacked-quads corner order
        order = [0, 4, 6, 2, 1, 5, 7, 3]
        pts = cube[order]
        tets = subdivide_cell_3d(np.arange(8))
        vols = np.array([signed_volume(*pts[t]) for t in tets])
        assert len(tets) == 10
        assert (vols > 0).all()
        assert vols[:5].sum() == pytest.approx(1.0)
        assert vols[5:].sum() == pytest.approx(1.0)
        for v in vols:
            assert min(abs(v - 1 / 6), abs(v - 1 / 3)) < 1e-12

    def test_cube_collapsed_corner(self):
        cube = np.array(list(np.ndindex(2, 2, 2)), dtype=float)
        pts = cube[[0, 4, 6, 2, 1, 5, 7, 3]]
        pts[1] = pts[0]
        vols = [signed_volume(*pts[t]) for t in subdivide_cell_3d(np.arange(8))]
        assert min(abs(v) for v in vols) == 0.0


class TestKernel:
    diamond = np.array([[1, 0], [0, 1], [-1, 0], [0, -1]], dtype=float)

    def test_center_inside(self):
        assert in_kernel((0.0, 0.0), self.diamond)

    def test_outside(self):
        assert not in_kernel((2.0, 0.0), self.diamond)

    def test_arrowhead_interior_not_kernel(self):
        # concave arrowhead (dart): the reflex vertex cuts the kernel away
        # from points that are still inside the polygon
        arrow = np.array([[0, 1.0], [-0.9, -0.8], [0, -0.3], [0.9, -0.8]])
        wing = (-0.3, -0.35)             # inside the left wing, not in kernel
        assert not in_kernel(wing, arrow)
        assert not kernel_oracle(wing, arrow)
        tip = (0.0, 0.2)                 # sees every vertex
        assert in_kernel(tip, arrow)
        assert kernel_oracle(tip, arrow)

    def test_short_ring_rejected(self):
        with pytest.raises(ValueError):
            in_kernel((0, 0), [(1, 0)])

    def test_open_fan(self):
        fan = np.array([[1, 0], [0, 1], [-1, 0]], dtype=float)
        assert in_kernel((0.0, -0.5), fan, closed=False)
        assert not in_kernel((0.0, -0.5), fan, closed=True)

    def test_matches_halfplane_oracle(self, rng):
        # module-level smoke version of the acceptance check
        agree = 0
        for _ in range(200):
            ring = random_star_ring(rng)
            for cand in [(0.0, 0.0), tuple(rng.uniform(-1.6, 1.6, 2))]:
                got = in_kernel(cand, ring)
                want = kernel_oracle(cand, ring)
                assert got == want
                agree += 1
        assert agree == 400


class TestApplyBoundary:
    def test_pinned_axis_restored(self):
        complex_, topo, bc = build_grid((3, 3), 2)
        left_mid = topo.vertex_index(np.array([0, 1]))
        moved = complex_.positions.copy()
        moved[left_mid] = (-0.9, 0.3)
        fixed = apply_boundary(moved, bc)
        assert tuple(fixed[left_mid]) == (-1.0, 0.3)

    def test_circle_unit_vector_unchanged(self):
        bc = BoundaryConstraint.free(1, 2)
        bc.on_circle[0] = True
        out = apply_boundary(np.array([[0.6, 0.8]]), bc)
        assert np.allclose(out, [[0.6, 0.8]])

    def test_circle_normalization(self):
        bc = BoundaryConstraint.free(1, 2)
        bc.on_circle[0] = True
        out = apply_boundary(np.array([[3.0, 4.0]]), bc)
        assert np.allclose(out, [[0.6, 0.8]])

    def test_circle_origin_degenerate(self):
        bc = BoundaryConstraint.free(1, 2)
        bc.on_circle[0] = True
        with pytest.raises(DegenerateProjectionError):
            apply_boundary(np.array([[0.0, 0.0]]), bc)

    def test_idempotent(self, rng):
        complex_, _, bc = build_grid((5, 4), 2)
        bc.on_circle[0] = False
        moved = complex_.positions + 0.3 * rng.standard_normal((20, 2))
        once = apply_boundary(moved, bc)
        twice = apply_boundary(once, bc)
        assert np.array_equal(once, twice)
