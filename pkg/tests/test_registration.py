import math

import numpy as np
import pytest

from rio.core import Pose, Quaternion, pose_compose, rotation_angle_between, transform_points
from rio.errors import InsufficientCorrespondenceError, ZeroOverlapError
from rio.radar_sim import RadarScan
from rio.registration import (
    IcpOptions,
    NdtMap,
    NdtOptions,
    icp_align,
    ndt_align,
    ndt_insert,
    ndt_map_rows,
    ndt_score,
    rigid_transform_svd,
)

CENTERS = np.array([[x, y, z] for x in (-1.5, 0.5, 2.5) for y in (-1.5, 0.5, 2.5) for z in (-0.5, 1.5)])


def cluster_cloud(seed=0, per_cluster=40, sigma=0.08):
    rng = np.random.default_rng(seed)
    return np.vstack([c + rng.normal(0.0, sigma, (per_cluster, 3)) for c in CENTERS])


def cluster_map(seed=0) -> NdtMap:
    return ndt_insert(NdtMap(cell_size=1.0), cluster_cloud(seed))


def cell_means(ndt_map: NdtMap) -> np.ndarray:
    return ndt_map.lookup()[1].copy()


def score_at(ndt_map, points, pose):
    return ndt_score(ndt_map, points, pose)[0]


class Test_ndt_insert:
    def test_single_point_is_not_scored(self):
        m = ndt_insert(NdtMap(), [[0.1, 0.1, 0.1]])
        (cell,) = m.cells.values()
        assert cell.count == 1
        assert m.valid_cells() == {}
        assert m.total_points == 1

    def test_collinear_points_are_regularized(self):
        m = ndt_insert(NdtMap(cell_size=0.5, regularization=0.1), [[0.1, 0.1, 0.1], [0.2, 0.1, 0.1], [0.3, 0.1, 0.1]])
        (cell,) = m.valid_cells().values()
        w = np.linalg.eigvalsh(cell.covariance)
        assert w.min() >= m.floor - 1e-15
        cov = cell.covariance
        np.testing.assert_array_equal(cov, cov.T)

    def test_incremental_statistics_match_two_pass(self):
        rng = np.random.default_rng(1)
        points = rng.normal([0.25, 0.25, 0.25], 0.03, (1000, 3))
        m = NdtMap(cell_size=0.5, regularization=1e-3)
        start = 0
        for size in (1, 7, 92, 400, 500):
            ndt_insert(m, points[start : start + size])
            start += size
        (cell,) = m.cells.values()
        assert cell.count == 1000
        assert m.total_points == 1000
        np.testing.assert_allclose(cell.mean, points.mean(axis=0), atol=1e-6)
        np.testing.assert_allclose(cell.sample_covariance, np.cov(points.T), atol=1e-6)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            ndt_insert(NdtMap(), [[np.nan, 0.0, 0.0]])

    def test_map_rows(self):
        rows = ndt_map_rows(cluster_map())
        assert rows.shape == (len(CENTERS), 13)
        np.testing.assert_array_equal(rows[:, 3], 40)


class Test_ndt_score:
    def test_points_at_means_score_one_each(self):
        m = cluster_map()
        means = cell_means(m)
        score, gradient, _ = ndt_score(m, means, Pose.identity())
        assert score == pytest.approx(len(means))
        np.testing.assert_allclose(gradient, 0.0, atol=1e-9)

    def test_zero_overlap(self):
        with pytest.raises(ZeroOverlapError):
            ndt_score(cluster_map(), [[50.0, 0.0, 0.0]], Pose.identity())

    def test_gradient_matches_finite_differences(self):
        m = cluster_map()
        points = cluster_cloud(seed=5, per_cluster=5)
        pose = Pose([0.04, -0.02, 0.01], Quaternion.from_rotvec([0.01, -0.02, 0.03]))
        _, gradient, _ = ndt_score(m, points, pose)
        h = 1e-6
        numeric = np.array(
            [(score_at(m, points, pose.retract(h * e)) - score_at(m, points, pose.retract(-h * e))) / (2 * h) for e in np.eye(6)]
        )
        np.testing.assert_allclose(gradient, numeric, rtol=1e-5, atol=1e-5 * np.abs(numeric).max())

    def test_hessian_matches_finite_differences(self):
        m = cluster_map()
        points = cluster_cloud(seed=6, per_cluster=5)
        pose = Pose([0.03, 0.01, -0.02], Quaternion.from_rotvec([0.0, 0.01, -0.02]))
        _, _, hessian = ndt_score(m, points, pose)
        h = 1e-4
        eye = np.eye(6)
        numeric = np.zeros((6, 6))
        for i in range(6):
            for j in range(6):
                numeric[i, j] = (
                    score_at(m, points, pose.retract(h * (eye[i] + eye[j])))
                    - score_at(m, points, pose.retract(h * (eye[i] - eye[j])))
                    - score_at(m, points, pose.retract(h * (eye[j] - eye[i])))
                    + score_at(m, points, pose.retract(-h * (eye[i] + eye[j])))
                ) / (4 * h * h)
        np.testing.assert_allclose(hessian, numeric, rtol=1e-4, atol=1e-4 * np.abs(numeric).max())

    def test_invariant_under_grid_preserving_transform(self):
        cloud = cluster_cloud()
        moved = Pose([3.0, -2.0, 1.0], Quaternion.from_yaw(math.pi / 2))
        m = ndt_insert(NdtMap(cell_size=1.0), cloud)
        m_moved = ndt_insert(NdtMap(cell_size=1.0), transform_points(moved, cloud))
        points = cluster_cloud(seed=9, per_cluster=4)
        pose = Pose([0.02, 0.01, 0.0], Quaternion.from_yaw(0.01))
        assert score_at(m_moved, points, pose_compose(moved, pose)) == pytest.approx(score_at(m, points, pose), rel=1e-6)


class Test_ndt_align:
    def test_truth_is_a_fixed_point(self):
        m = cluster_map()
        result = ndt_align(m, cell_means(m), Pose.identity())
        assert result.converged
        assert result.iterations <= 2
        np.testing.assert_allclose(result.pose.position, 0.0, atol=1e-6)
        assert rotation_angle_between(result.pose.orientation, Quaternion.identity()) < 1e-6
        assert result.match_fraction == 1.0

    def test_recovers_small_offset(self):
        m = cluster_map()
        scan = RadarScan(0.0, cell_means(m), np.ones(len(CENTERS)), np.zeros(len(CENTERS)))
        initial = Pose.from_xy_yaw(0.05, 0.02, math.radians(3.0))
        start = score_at(m, scan.positions, initial)
        result = ndt_align(m, scan, initial, NdtOptions(cell_size=1.0))
        assert result.converged
        assert np.linalg.norm(result.pose.position) < 0.01
        assert math.degrees(rotation_angle_between(result.pose.orientation, Quaternion.identity())) < 0.5
        assert result.score >= start

    def test_far_start_does_not_converge(self):
        m = cluster_map()
        result = ndt_align(m, cell_means(m), Pose.from_xy_yaw(5.0, 5.0, 0.0))
        assert not result.converged
        assert result.match_fraction == 0.0


def grid_cloud(seed=0):
    rng = np.random.default_rng(seed)
    g = np.array([[x, y, z] for x in range(6) for y in range(6) for z in range(2)], dtype=float) * 0.5
    return g + rng.uniform(-0.05, 0.05, g.shape)


class Test_icp_align:
    def test_identical_clouds(self):
        cloud = grid_cloud()
        result = icp_align(cloud, cloud, Pose.identity())
        assert result.converged
        np.testing.assert_allclose(result.pose.position, 0.0, atol=1e-9)
        assert result.match_fraction == 1.0

    def test_recovers_known_transform(self):
        cloud = grid_cloud()
        truth = Pose([0.03, -0.02, 0.01], Quaternion.from_yaw(math.radians(1.0)))
        target = transform_points(truth, cloud)
        result = icp_align(target, RadarScan(0.0, cloud, np.ones(len(cloud)), np.zeros(len(cloud))), Pose.identity())
        assert result.converged
        np.testing.assert_allclose(result.pose.position, truth.position, atol=0.01)
        assert math.degrees(rotation_angle_between(result.pose.orientation, truth.orientation)) < 0.5

    def test_two_points(self):
        with pytest.raises(InsufficientCorrespondenceError):
            icp_align(grid_cloud(), [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], Pose.identity())

    def test_no_correspondences(self):
        with pytest.raises(InsufficientCorrespondenceError):
            icp_align(grid_cloud(), grid_cloud() + 100.0, Pose.identity(), IcpOptions())


def test_svd_rigid_solve_is_exact():
    rng = np.random.default_rng(3)
    src = rng.normal(size=(20, 3))
    truth = Pose([1.0, -2.0, 0.5], Quaternion.from_rotvec([0.3, -0.2, 0.9]))
    rotation, translation = rigid_transform_svd(src, transform_points(truth, src))
    np.testing.assert_allclose(rotation, truth.rotation_matrix(), atol=1e-9)
    np.testing.assert_allclose(translation, truth.position, atol=1e-9)
