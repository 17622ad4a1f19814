import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from instafield.grids import (SceneBounds, VoxelGrid, ray_aabb_intersect,
                              ray_aabb_intersect_batch, trilinear_sample)

from conftest import UNIT_BOUNDS, random_grid


class TestSceneBounds:
    def test_size_and_contains(self):
        b = SceneBounds([0, 0, 0], [2, 4, 6])
        assert np.allclose(b.size, [2, 4, 6])
        assert b.contains([1, 1, 1])[0]
        assert not b.contains([3, 1, 1])[0]
        # boundary is inside
        assert b.contains([0, 0, 0])[0] and b.contains([2, 4, 6])[0]

    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            SceneBounds([0, 0, 0], [1, 0, 1])
        with pytest.raises(ValueError):
            SceneBounds([0, 0, np.nan], [1, 1, 1])

    def test_immutable(self):
        b = SceneBounds([0, 0, 0], [1, 1, 1])
        with pytest.raises(ValueError):
            b.min_corner[0] = 5.0


class TestVoxelGrid:
    def test_layout_is_x_fastest(self):
        # data[z, y, x, c] C-contiguous means x varies fastest, channels
        # interleaved per voxel
        g = VoxelGrid.zeros((4, 3, 2), 2, UNIT_BOUNDS)
        assert g.data.shape == (2, 3, 4, 2)
        assert g.data.flags["C_CONTIGUOUS"]
        g.data[0, 0, 1, 0] = 7.0
        flat = g.data.reshape(-1)
        assert flat[2] == 7.0  # second voxel along x, channel 0

    def test_voxel_centers_oracle(self):
        b = SceneBounds([0, 0, 0], [4, 2, 2])
        g = VoxelGrid.zeros((4, 2, 2), 1, b)
        centers = g.voxel_centers()
        assert centers.shape == (2, 2, 4, 3)
        assert np.allclose(centers[0, 0, 0], [0.5, 0.5, 0.5])
        assert np.allclose(centers[1, 1, 3], [3.5, 1.5, 1.5])

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            VoxelGrid(dims=(2, 2, 2), channels=1, bounds=UNIT_BOUNDS,
                      data=np.zeros((2, 2, 3, 1)))
        with pytest.raises(ValueError):
            VoxelGrid.zeros((0, 2, 2), 1, UNIT_BOUNDS)
        bad = np.zeros((2, 2, 2, 1))
        bad[0, 0, 0, 0] = np.inf
        with pytest.raises(ValueError):
            VoxelGrid(dims=(2, 2, 2), channels=1, bounds=UNIT_BOUNDS, data=bad)

    def test_container_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        g = random_grid(rng, (5, 4, 3), 2).astype(np.float32)
        g.save(tmp_path / "grid.json")
        assert (tmp_path / "grid.f32").exists()
        back = VoxelGrid.load(tmp_path / "grid.json")
        assert back.dims == g.dims
        assert back.channels == g.channels
        assert np.array_equal(back.data, g.data)
        assert np.array_equal(back.bounds.min_corner, g.bounds.min_corner)

    def test_load_rejects_unknown_dtype(self, tmp_path):
        g = VoxelGrid.zeros((2, 2, 2), 1, UNIT_BOUNDS)
        g.save(tmp_path / "g.json")
        manifest = (tmp_path / "g.json").read_text().replace("f32le", "f64be")
        (tmp_path / "g.json").write_text(manifest)
        with pytest.raises(ValueError):
            VoxelGrid.load(tmp_path / "g.json")


def _trilinear_oracle(grid, point):
    """From-definition trilinear blend over the 8 surrounding voxel centers."""
    nx, ny, nz = grid.dims
    dims = np.array([nx, ny, nz])
    u = (np.asarray(point) - grid.bounds.min_corner) * grid.inv_voxel - 0.5
    u = np.clip(u, 0.0, dims - 1)
    i0 = np.minimum(np.floor(u).astype(int), np.maximum(dims - 2, 0))
    f = u - i0
    out = np.zeros(grid.channels)
    for cz in (0, 1):
        for cy in (0, 1):
            for cx in (0, 1):
                iz = min(i0[2] + cz, nz - 1)
                iy = min(i0[1] + cy, ny - 1)
                ix = min(i0[0] + cx, nx - 1)
                w = ((f[0] if cx else 1 - f[0])
                     * (f[1] if cy else 1 - f[1])
                     * (f[2] if cz else 1 - f[2]))
                out += w * grid.data[iz, iy, ix]
    return out


class TestTrilinearSample:
    def test_matches_oracle_random_points(self):
        rng = np.random.default_rng(11)
        g = random_grid(rng, (6, 5, 4), 3)
        pts = rng.uniform(-1, 1, size=(200, 3))
        got = trilinear_sample(g, pts)
        want = np.stack([_trilinear_oracle(g, p) for p in pts])
        assert np.allclose(got, want, atol=1e-12)

    def test_exact_at_voxel_centers(self):
        rng = np.random.default_rng(5)
        g = random_grid(rng, (4, 4, 4), 2)
        centers = g.voxel_centers()
        got = trilinear_sample(g, centers.reshape(-1, 3))
        assert np.allclose(got, g.data.reshape(-1, 2), atol=1e-12)

    def test_boundary_clamp(self):
        rng = np.random.default_rng(7)
        g = random_grid(rng, (4, 4, 4), 1)
        # beyond the boundary half-voxel the value equals the edge voxel
        corner = trilinear_sample(g, np.array([-1.0, -1.0, -1.0]))
        assert np.allclose(corner, g.data[0, 0, 0], atol=1e-12)

    def test_single_point_shape(self):
        g = VoxelGrid.zeros((2, 2, 2), 3, UNIT_BOUNDS)
        assert trilinear_sample(g, np.zeros(3)).shape == (3,)

    def test_rejects_nonfinite(self):
        g = VoxelGrid.zeros((2, 2, 2), 1, UNIT_BOUNDS)
        with pytest.raises(ValueError):
            trilinear_sample(g, np.array([np.nan, 0, 0]))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_interpolation_within_value_range(self, seed):
        rng = np.random.default_rng(seed)
        g = random_grid(rng, (3, 3, 3), 1)
        pts = rng.uniform(-1.2, 1.2, size=(20, 3))
        vals = trilinear_sample(g, pts)
        assert np.all(vals >= g.data.min() - 1e-12)
        assert np.all(vals <= g.data.max() + 1e-12)


class TestRayAabb:
    def test_hit_through_center(self):
        res = ray_aabb_intersect([-3, 0, 0], [1, 0, 0], UNIT_BOUNDS)
        assert res is not None
        assert np.allclose(res, (2.0, 4.0))

    def test_miss(self):
        assert ray_aabb_intersect([-3, 5, 0], [1, 0, 0], UNIT_BOUNDS) is None

    def test_box_behind_origin(self):
        assert ray_aabb_intersect([3, 0, 0], [1, 0, 0], UNIT_BOUNDS) is None

    def test_origin_inside_clamps_to_zero(self):
        res = ray_aabb_intersect([0, 0, 0], [1, 0, 0], UNIT_BOUNDS)
        assert np.allclose(res, (0.0, 1.0))

    def test_parallel_component_outside(self):
        assert ray_aabb_intersect([0, 2, 0], [1, 0, 0], UNIT_BOUNDS) is None

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_batch_agrees_with_scalar(self, seed):
        rng = np.random.default_rng(seed)
        o = rng.uniform(-4, 4, size=(32, 3))
        d = rng.normal(size=(32, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        t0, t1 = ray_aabb_intersect_batch(o, d, UNIT_BOUNDS)
        for idx in range(32):
            res = ray_aabb_intersect(o[idx], d[idx], UNIT_BOUNDS)
            if res is None:
                assert not (t1[idx] > t0[idx])
            else:
                assert np.allclose((t0[idx], t1[idx]), res, atol=1e-9)

    def test_entry_exit_points_lie_on_box(self):
        rng = np.random.default_rng(9)
        o = rng.uniform(2, 4, size=(64, 3)) * rng.choice([-1, 1], size=(64, 3))
        d = -o + rng.normal(scale=0.3, size=(64, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        t0, t1 = ray_aabb_intersect_batch(o, d, UNIT_BOUNDS)
        hit = t1 > t0
        assert hit.any()
        entry = o[hit] + t0[hit, None] * d[hit]
        exit_ = o[hit] + t1[hit, None] * d[hit]
        assert np.all(np.abs(entry).max(axis=1) <= 1 + 1e-9)
        assert np.all(np.isclose(np.abs(entry).max(axis=1), 1, atol=1e-9))
        assert np.all(np.isclose(np.abs(exit_).max(axis=1), 1, atol=1e-9))
