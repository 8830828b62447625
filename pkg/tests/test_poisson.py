import numpy as np
import pytest

from desplat.errors import NumericalError
from desplat.poisson import (IndicatorGrid, OrientedPointSet, build_indicator,
                             extract_interior_points, mean_curvature,
                             remap_grid, resolve_conflicts)
from conftest import sphere_samples


def sphere_points(n=5000, radius=1.0, center=(0, 0, 0)):
    pos, nrm = sphere_samples(n, radius, center)
    return OrientedPointSet(positions=pos, normals=nrm)


@pytest.fixture(scope="module")
def sphere_grid():
    return build_indicator(sphere_points(), dims=64)


class TestBuildIndicator:
    def test_sphere_classification(self, sphere_grid):
        g = sphere_grid
        assert g.sample([[0.0, 0.0, 0.0]])[0] > 0.5
        assert g.values[1, 1, 1] < 0.5

    def test_sphere_level_set_accuracy(self, sphere_grid):
        # Hausdorff of the 0.5-level set against the unit sphere, both ways:
        # every zero-crossing along grid edges must be within 1.5 cells
        g = sphere_grid
        interior = g.values > 0.5
        ids = np.argwhere(interior[:-1, :, :] != interior[1:, :, :])
        pts = g.cell_centers(ids) + [0.5 * g.cell, 0.0, 0.0]
        for axis in (1, 2):
            sl_a = [slice(None)] * 3
            sl_b = [slice(None)] * 3
            sl_a[axis] = slice(None, -1)
            sl_b[axis] = slice(1, None)
            ids = np.argwhere(interior[tuple(sl_a)] != interior[tuple(sl_b)])
            off = np.zeros(3)
            off[axis] = 0.5 * g.cell
            pts = np.vstack([pts, g.cell_centers(ids) + off])
        r = np.linalg.norm(pts, axis=1)
        assert np.max(np.abs(r - 1.0)) < 1.5 * g.cell

    def test_flipped_normals_swap_classification(self):
        pts = sphere_points(2000)
        flipped = OrientedPointSet(positions=pts.positions, normals=-pts.normals)
        g = build_indicator(flipped, dims=32)
        assert g.sample([[0.0, 0.0, 0.0]])[0] < 0.5

    def test_minimum_point_count(self):
        pts = sphere_points(20)
        with pytest.raises(ValueError, match="at least 50"):
            build_indicator(pts, dims=32)

    def test_degenerate_bbox(self):
        pos = np.zeros((100, 3))
        nrm = np.tile([0.0, 0.0, 1.0], (100, 1))
        with pytest.raises(ValueError, match="degenerate"):
            build_indicator(OrientedPointSet(positions=pos, normals=nrm), dims=32)

    def test_serialization_round_trip(self, sphere_grid, tmp_path):
        path = tmp_path / "grid.ivol"
        sphere_grid.save(path)
        back = IndicatorGrid.load(path)
        assert np.allclose(back.origin, sphere_grid.origin)
        assert back.cell == pytest.approx(sphere_grid.cell, rel=1e-12)
        assert np.max(np.abs(back.values - sphere_grid.values)) < 1e-6


class TestRemap:
    def test_identity_frame(self, sphere_grid):
        out = remap_grid(sphere_grid, sphere_grid)
        assert np.max(np.abs(out.values - sphere_grid.values)) < 1e-12

    def test_half_cell_shift_of_linear_ramp(self):
        dims = (16, 16, 16)
        cell = 0.1
        origin = np.zeros(3)
        ii = np.arange(16)
        ramp = (ii[:, None, None] + 2.0 * ii[None, :, None] - ii[None, None, :]).astype(float)
        src = IndicatorGrid(origin=origin, cell=cell, values=ramp)
        shifted = remap_grid(src, (origin + 0.5 * cell, cell, dims))
        # trilinear interpolation reproduces linear fields exactly (interior)
        expect = ramp + 0.5 + 2.0 * 0.5 - 0.5
        assert np.max(np.abs(shifted.values[:-1, :-1, :-1] - expect[:-1, :-1, :-1])) < 1e-12

    def test_sphere_volume_preserved(self, sphere_grid):
        target = (sphere_grid.origin + 0.37 * sphere_grid.cell,
                  sphere_grid.cell * 1.11, (48, 48, 48))
        out = remap_grid(sphere_grid, target)
        v_src = np.count_nonzero(sphere_grid.values > 0.5) * sphere_grid.cell ** 3
        v_out = np.count_nonzero(out.values > 0.5) * out.cell ** 3
        assert abs(v_out - v_src) / v_src < 0.05

    def test_no_overlap(self, sphere_grid):
        with pytest.raises(ValueError, match="overlap"):
            remap_grid(sphere_grid, (sphere_grid.origin + 1000.0, 0.01, (16, 16, 16)))


class TestMeanCurvature:
    def test_plane_is_flat(self, rng):
        pts = np.column_stack([rng.uniform(-1, 1, (800, 2)), np.zeros(800)])
        H = mean_curvature(pts, k=16)
        assert np.max(np.abs(H)) < 1e-3

    def test_sphere_curvature(self):
        pos, _ = sphere_samples(2000, radius=1.0)
        H = mean_curvature(pos, k=16)
        assert np.median(H) == pytest.approx(1.0, rel=0.10)

    def test_curvature_scales_inversely_with_radius(self):
        h1 = np.median(mean_curvature(sphere_samples(2000, radius=1.0)[0], k=16))
        h2 = np.median(mean_curvature(sphere_samples(2000, radius=2.0)[0], k=16))
        assert h2 == pytest.approx(0.5 * h1, rel=0.10)

    def test_rank_deficient_flagged_zero(self):
        pts = np.zeros((40, 3))
        pts[:, 0] = np.linspace(0, 1, 40)  # collinear
        H, flags = mean_curvature(pts, k=8, return_flags=True)
        assert np.all(H[flags] == 0.0)
        assert flags.any()

    def test_needs_enough_points(self):
        with pytest.raises(ValueError):
            mean_curvature(np.zeros((5, 3)), k=16)


def slab_points(n=6000, half=1.5, z=0.0):
    rng = np.random.default_rng(99)
    pos = np.column_stack([rng.uniform(-half, half, (n, 2)), np.full(n, z)])
    nrm = np.tile([0.0, 0.0, 1.0], (n, 1))
    return OrientedPointSet(positions=pos, normals=nrm)


class TestResolveConflicts:
    def test_non_overlapping_unchanged(self):
        # disjoint interiors inside one shared frame: nothing may change
        a = build_indicator(sphere_points(2000, radius=0.5, center=(0, 0, 0)),
                            dims=48, padding=1.0)
        b = build_indicator(sphere_points(2000, radius=0.4, center=(1.4, 0, 0)), dims=48)
        b_in_a = remap_grid(b, a)
        xs, xo = resolve_conflicts(a, b_in_a)
        assert np.array_equal(xs.values, a.values)
        assert np.array_equal(xo.values, b_in_a.values)

    def test_object_all_exterior_keeps_scene(self, sphere_grid):
        empty = IndicatorGrid(origin=sphere_grid.origin, cell=sphere_grid.cell,
                              values=np.zeros_like(sphere_grid.values))
        xs, xo = resolve_conflicts(sphere_grid, empty)
        assert np.array_equal(xs.values, sphere_grid.values)

    def test_half_sunk_sphere_on_slab(self):
        scene = build_indicator(slab_points(), dims=64, padding=0.1)
        ball = build_indicator(sphere_points(4000, radius=0.3, center=(0, 0, 0.05)),
                               dims=64)
        ball_in_scene = remap_grid(ball, scene)
        xs, xo = resolve_conflicts(scene, ball_in_scene)
        s_in = xs.values > 0.5
        o_in = xo.values > 0.5
        assert o_in.any()
        # conflict-freeness: no object-interior cell 6-adjacent to scene interior
        from scipy.ndimage import binary_dilation
        from desplat.poisson import _neighbor_struct
        adj = binary_dilation(s_in, structure=_neighbor_struct(6))
        assert not np.any(o_in & adj)
        # voxel-scan oracle: per column, the object sits strictly above the slab
        cols = np.argwhere(o_in.any(axis=2))
        for i, j in cols[:: max(1, len(cols) // 64)]:
            o_z = np.nonzero(o_in[i, j])[0]
            s_z = np.nonzero(s_in[i, j])[0]
            if s_z.size:
                assert o_z.min() > s_z.max()

    def test_monotone_repair(self):
        scene = build_indicator(slab_points(3000), dims=48, padding=0.1)
        ball = build_indicator(sphere_points(3000, radius=0.3, center=(0, 0, 0.02)),
                               dims=48)
        ball_in_scene = remap_grid(ball, scene)
        xs, xo = resolve_conflicts(scene, ball_in_scene)
        for new, old in ((xs.values, scene.values), (xo.values, ball_in_scene.values)):
            assert np.all(new <= old + 1e-15)
            changed = new != old
            assert np.all(new[changed] == 0.49)

    def test_frame_mismatch_rejected(self, sphere_grid):
        other = IndicatorGrid(origin=sphere_grid.origin + 0.01,
                              cell=sphere_grid.cell, values=sphere_grid.values.copy())
        with pytest.raises(ValueError, match="co-registered"):
            resolve_conflicts(sphere_grid, other)


class TestExtractInterior:
    def test_all_exterior_empty(self):
        g = IndicatorGrid(origin=np.zeros(3), cell=0.1, values=np.zeros((8, 8, 8)))
        assert extract_interior_points(g).shape == (0, 3)

    def test_sphere_volume(self, sphere_grid):
        pts = extract_interior_points(sphere_grid)
        vol = len(pts) * sphere_grid.cell ** 3
        assert vol == pytest.approx(4.0 / 3.0 * np.pi, rel=0.10)

    def test_points_requery_interior(self, sphere_grid):
        pts = extract_interior_points(sphere_grid)
        ids = np.floor((pts - sphere_grid.origin) / sphere_grid.cell).astype(int)
        vals = sphere_grid.values[ids[:, 0], ids[:, 1], ids[:, 2]]
        assert np.all(vals > 0.5)
