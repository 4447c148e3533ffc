from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from roadreg.cloud_prep import (
    PrepParams,
    adaptive_radii,
    adaptive_voxel_size,
    dbscan_labels,
    filter_clusters_dbscan,
    knn,
    label_roads_by_ground,
    prepare_road_cloud,
    rasterize_xy,
    remove_statistical_outliers,
    select_road_points,
    voxel_downsample,
)
from roadreg.errors import AllFiltered, EmptyCloud, EmptyResult, InvalidInput, NoLabels, TooFewPoints
from roadreg.model import PointCloud


def grid_cloud(n: int = 10, spacing: float = 1.0) -> np.ndarray:
    g = np.stack(np.meshgrid(np.arange(n), np.arange(n)), -1).reshape(-1, 2) * spacing
    return np.column_stack([g, np.zeros(len(g))]).astype(np.float64)


def clusters_of(labels: np.ndarray) -> set[frozenset[int]]:
    return {frozenset(np.flatnonzero(labels == c).tolist()) for c in np.unique(labels[labels >= 0])}


class TestParams:
    @pytest.mark.parametrize("kw", [{"alpha": 0}, {"k_neighbors": 1}, {"min_pts": 0}, {"gamma_eps": -1}])
    def test_invalid(self, kw):
        with pytest.raises(InvalidInput):
            PrepParams(**kw)


class TestSelect:
    def test_keeps_order(self):
        c = PointCloud(np.arange(15.0).reshape(5, 3), np.array([1, 0, 1, 0, 1]))
        out = select_road_points(c, 1)
        np.testing.assert_array_equal(out.xyz[:, 0], [0, 6, 12])

    def test_all_road_is_identity(self):
        c = PointCloud(np.arange(9.0).reshape(3, 3), np.ones(3, dtype=int))
        assert select_road_points(c).equals(c)

    def test_no_labels(self):
        with pytest.raises(NoLabels):
            select_road_points(PointCloud(np.zeros((3, 3))))

    def test_no_road(self):
        with pytest.raises(EmptyResult):
            select_road_points(PointCloud(np.zeros((3, 3)), np.zeros(3, dtype=int)))

    def test_ground_fallback_labels_plane_points(self, rng):
        ground = np.column_stack([rng.uniform(0, 40, (2000, 2)), np.full(2000, 3.0)])
        roof = np.column_stack([rng.uniform(10, 20, (300, 2)), np.full(300, 12.0)])
        c = label_roads_by_ground(PointCloud(np.concatenate([ground, roof])))
        assert (c.labels[:2000] == 1).all() and (c.labels[2000:] == 0).all()


class TestVoxelSize:
    def test_unit_density(self, rng):
        xyz = rng.uniform(0, 10, (1000, 3))
        xyz[0], xyz[1] = 0.0, 10.0
        assert adaptive_voxel_size(PointCloud(xyz), 1.0) == pytest.approx(1.0)
        assert adaptive_voxel_size(PointCloud(xyz), 0.5) == pytest.approx(0.5)

    def test_cube_corners(self):
        corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
        assert adaptive_voxel_size(PointCloud(corners), 1.0) == pytest.approx(0.5)

    def test_flat_axis_padded(self):
        s = adaptive_voxel_size(PointCloud(grid_cloud(10)), 1.0, min_extent=1.0)
        assert s == pytest.approx((9 * 9 * 1 / 100) ** (1 / 3))

    def test_empty(self):
        with pytest.raises(EmptyCloud):
            adaptive_voxel_size(PointCloud(np.zeros((0, 3))), 1.0)


class TestVoxelDownsample:
    def test_close_and_far_pairs(self):
        assert len(voxel_downsample(PointCloud.from_points([[0.2, 0.2, 0.2], [0.3, 0.2, 0.2]]), 1.0)) == 1
        assert len(voxel_downsample(PointCloud.from_points([[0, 0, 0], [10, 0, 0]]), 1.0)) == 2

    def test_matches_hashing_oracle(self, rng):
        xyz = rng.uniform(-5, 5, (1000, 3))
        out = voxel_downsample(PointCloud(xyz), 0.5)
        cells = oracles.voxel_occupancy(xyz, 0.5)
        assert len(out) == len(cells)
        # one kept point per occupied cell, each an input member of that cell
        kept = {tuple(p) for p in out.xyz}
        for members in cells.values():
            assert sum(tuple(xyz[i]) in kept for i in members) == 1

    def test_representative_nearest_centroid(self):
        # centroid (0.4875, 0.5, 0.5) lies closest to the second point
        xyz = np.array([[0.1, 0.1, 0.1], [0.5, 0.5, 0.5], [0.9, 0.9, 0.9], [0.45, 0.5, 0.5]])
        out = voxel_downsample(PointCloud(xyz), 1.0)
        np.testing.assert_array_equal(out.xyz, [[0.5, 0.5, 0.5]])

    def test_labels_carried(self):
        c = PointCloud(np.array([[0, 0, 0], [5, 5, 5.0]]), np.array([3, 7]))
        np.testing.assert_array_equal(voxel_downsample(c, 1.0).labels, [3, 7])

    @given(st.integers(0, 10_000), st.floats(0.05, 3.0))
    def test_idempotent(self, seed, s):
        xyz = np.random.default_rng(seed).normal(0, 4, (300, 3))
        once = voxel_downsample(PointCloud(xyz), s)
        assert len(voxel_downsample(once, s)) == len(once)

    def test_bad_size(self):
        with pytest.raises(InvalidInput):
            voxel_downsample(PointCloud(np.zeros((2, 3))), 0.0)


class TestOutliers:
    def test_far_point_removed(self):
        xyz = np.vstack([grid_cloud(10), [[50.0, 50.0, 0.0]]])
        out = remove_statistical_outliers(PointCloud(xyz))
        assert len(out) == 100
        assert not (out.xyz == [50.0, 50.0, 0.0]).all(axis=1).any()

    def test_uniform_grid_unchanged(self):
        c = PointCloud(grid_cloud(10))
        assert remove_statistical_outliers(c).equals(c)

    def test_too_few(self):
        with pytest.raises(TooFewPoints):
            remove_statistical_outliers(PointCloud(np.random.default_rng(0).normal(size=(20, 3))))

    def test_knn_excludes_self(self, rng):
        xyz = rng.normal(size=(50, 3))
        d, idx = knn(xyz, 5)
        assert not (idx == np.arange(50)[:, None]).any()
        ref_d, _ = oracles.exact_knn(xyz, 5)
        np.testing.assert_allclose(d, ref_d)

    def test_knn_with_duplicates_still_excludes_self(self):
        xyz = np.zeros((6, 3))
        _, idx = knn(xyz, 3)
        assert not (idx == np.arange(6)[:, None]).any()

    @given(st.integers(0, 10_000))
    def test_matches_brute_force(self, seed):
        r = np.random.default_rng(seed)
        xyz = np.concatenate([r.normal(0, 1, (150, 3)), r.uniform(-15, 15, (10, 3))])
        p = PrepParams()
        keep = oracles.outlier_keep(xyz, p.k_neighbors, p.beta_std, p.tau_factor)
        out = remove_statistical_outliers(PointCloud(xyz), p)
        np.testing.assert_array_equal(out.xyz, xyz[keep])


class TestDbscan:
    def test_two_blobs_and_scatter(self, rng):
        a = rng.normal(0, 1, (100, 3))
        b = rng.normal(0, 1, (100, 3)) + [100, 0, 0]
        scatter = rng.uniform(-300, 300, (5, 3)) + [0, 400, 0]
        xyz = np.concatenate([a, b, scatter])
        out = filter_clusters_dbscan(PointCloud(xyz))
        assert len(out) == 200
        np.testing.assert_array_equal(out.xyz, xyz[:200])

    def test_single_blob_identity(self, rng):
        c = PointCloud(rng.normal(0, 1, (200, 3)))
        assert filter_clusters_dbscan(c).equals(c)

    def test_ten_points_all_filtered(self, rng):
        with pytest.raises(AllFiltered):
            filter_clusters_dbscan(PointCloud(rng.normal(size=(10, 3))))

    def test_single_point(self):
        with pytest.raises(TooFewPoints):
            filter_clusters_dbscan(PointCloud(np.zeros((1, 3))))

    @given(st.integers(0, 10_000))
    def test_matches_brute_force(self, seed):
        r = np.random.default_rng(seed)
        xyz = np.concatenate([r.normal(0, 1, (120, 3)), r.normal(0, 0.5, (40, 3)) + 6, r.uniform(-20, 20, (20, 3))])
        radii = adaptive_radii(xyz, 20, 1.8)
        labels = dbscan_labels(xyz, radii, 17)
        assert clusters_of(labels) == set(oracles.dbscan(xyz, radii, 17))

    @given(st.integers(0, 10_000))
    def test_order_independent(self, seed):
        r = np.random.default_rng(seed)
        xyz = np.concatenate([r.normal(0, 1, (100, 3)), r.uniform(-10, 10, (30, 3))])
        perm = r.permutation(len(xyz))
        a = filter_clusters_dbscan(PointCloud(xyz))
        b = filter_clusters_dbscan(PointCloud(xyz[perm]))
        assert {tuple(p) for p in a.xyz} == {tuple(p) for p in b.xyz}


class TestRasterize:
    def test_single_point(self):
        r = rasterize_xy(PointCloud.from_points([[3.3, 4.4, 0]]), 1.0)
        assert r.bits.shape == (5, 5)
        assert r.count == 1 and r.bits[2, 2]

    def test_distance_preserved(self):
        r = rasterize_xy(PointCloud.from_points([[0, 0, 0], [10, 0, 0]]), 1.0)
        rows, cols = np.nonzero(r.bits)
        assert cols.max() - cols.min() == 10 and rows.min() == rows.max()

    def test_matches_binning_oracle(self, rng):
        xyz = rng.uniform(0, 30, (1000, 3))
        r = rasterize_xy(PointCloud(xyz), 0.7)
        xmin, ymax = xyz[:, 0].min(), xyz[:, 1].max()
        cells = {(math.floor((ymax - y) / 0.7), math.floor((x - xmin) / 0.7)) for x, y in xyz[:, :2]}
        assert r.count == len(cells)

    def test_pixel_centres_near_points(self, rng):
        xyz = rng.uniform(0, 20, (300, 3))
        mpp = 0.5
        r = rasterize_xy(PointCloud(xyz), mpp)
        centres = r.set_pixels_world()
        d = np.sqrt(((centres[:, None, :] - xyz[None, :, :2]) ** 2).sum(-1)).min(axis=1)
        assert d.max() <= mpp * math.sqrt(2) / 2 + 1e-12

    def test_empty(self):
        with pytest.raises(EmptyCloud):
            rasterize_xy(PointCloud(np.zeros((0, 3))), 1.0)


def test_prepare_road_cloud_end_to_end(rng):
    road = np.column_stack([rng.uniform(0, 60, 4000), rng.uniform(0, 6, 4000), rng.normal(0, 0.02, 4000)])
    other = np.column_stack([rng.uniform(0, 60, 500), rng.uniform(20, 30, 500), rng.uniform(0, 5, 500)])
    labels = np.r_[np.ones(4000, int), np.zeros(500, int)]
    out = prepare_road_cloud(PointCloud(np.concatenate([road, other]), labels))
    assert 0 < len(out) <= 4000
    assert (out.labels == 1).all()
    assert out.xyz[:, 1].max() <= 6.0
