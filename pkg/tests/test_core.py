import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from rio.core import (
    Pose,
    Quaternion,
    Timestamped,
    pose_compose,
    pose_inverse,
    quat_from_matrix,
    quat_multiply,
    quat_multiply_array,
    quat_normalize,
    rotation_angle_between,
    skew,
    transform_point,
    transform_points,
)
from rio.errors import DegenerateQuaternionError, InvalidPoseError


def random_quaternion(rng):
    return quat_normalize(Quaternion.from_array(rng.normal(size=4)))


def random_pose(rng):
    return Pose(rng.uniform(-5.0, 5.0, size=3), random_quaternion(rng))


def assert_pose_close(a: Pose, b: Pose, atol=1e-9):
    np.testing.assert_allclose(a.position, b.position, atol=atol)
    assert rotation_angle_between(a.orientation, b.orientation) < atol


def test_identity_times_q_is_q():
    q = quat_normalize(Quaternion(0.3, -0.2, 0.9, 0.1))
    assert quat_multiply(Quaternion.identity(), q) == q
    assert quat_multiply(q, Quaternion.identity()) == q


def test_q_times_scaled_conjugate_is_identity():
    q = Quaternion(1.0, 2.0, -0.5, 3.0)
    n2 = q.norm() ** 2
    c = q.conjugate()
    out = quat_multiply(q, Quaternion(c.w / n2, c.x / n2, c.y / n2, c.z / n2))
    np.testing.assert_allclose(out.as_array(), [1.0, 0.0, 0.0, 0.0], atol=1e-12)


def test_hand_expanded_product():
    out = quat_multiply(Quaternion(0.7071, 0.7071, 0.0, 0.0), Quaternion(0.7071, 0.0, 0.7071, 0.0))
    np.testing.assert_allclose(out.as_array(), [0.5, 0.5, 0.5, 0.5], atol=1e-4)


def test_product_norm_is_product_of_norms():
    rng = np.random.default_rng(1)
    for _ in range(100):
        a = Quaternion.from_array(rng.normal(size=4))
        b = Quaternion.from_array(rng.normal(size=4))
        assert (a * b).norm() == pytest.approx(a.norm() * b.norm(), rel=1e-12)


def test_multiplication_is_associative():
    rng = np.random.default_rng(2)
    for _ in range(200):
        a, b, c = (random_quaternion(rng) for _ in range(3))
        np.testing.assert_allclose(((a * b) * c).as_array(), (a * (b * c)).as_array(), atol=1e-12)


def test_array_product_matches_scalar_product():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(20, 4))
    b = rng.normal(size=(20, 4))
    expected = np.array([quat_multiply(Quaternion.from_array(x), Quaternion.from_array(y)).as_array() for x, y in zip(a, b)])
    np.testing.assert_allclose(quat_multiply_array(a, b), expected, atol=1e-14)


@pytest.mark.parametrize(
    "raw, expected",
    [
        ((2.0, 0.0, 0.0, 0.0), (1.0, 0.0, 0.0, 0.0)),
        ((1.0, 1.0, 1.0, 1.0), (0.5, 0.5, 0.5, 0.5)),
        ((-1.0, 1.0, 1.0, 1.0), (0.5, -0.5, -0.5, -0.5)),
    ],
)
def test_normalize(raw, expected):
    q = quat_normalize(Quaternion(*raw))
    np.testing.assert_allclose(q.as_array(), expected, atol=1e-15)
    assert abs(q.norm() - 1.0) <= 1e-12
    assert q.w >= 0.0


@pytest.mark.parametrize("raw", [(0.0, 0.0, 0.0, 0.0), (math.nan, 0.0, 0.0, 1.0)])
def test_normalize_degenerate(raw):
    with pytest.raises(DegenerateQuaternionError):
        quat_normalize(Quaternion(*raw))


def test_rotation_matrix_matches_scipy():
    rng = np.random.default_rng(4)
    for _ in range(20):
        q = random_quaternion(rng)
        expected = Rotation.from_quat([q.x, q.y, q.z, q.w]).as_matrix()
        np.testing.assert_allclose(q.rotation_matrix(), expected, atol=1e-12)
        assert rotation_angle_between(quat_from_matrix(expected), q) < 1e-7


def test_skew_is_cross_product():
    a, b = np.array([1.0, -2.0, 0.5]), np.array([0.3, 0.1, -4.0])
    np.testing.assert_allclose(skew(a) @ b, np.cross(a, b))


def test_compose_with_identity():
    p = Pose.from_xy_yaw(1.0, 2.0, 0.3)
    assert_pose_close(pose_compose(Pose.identity(), p), p)
    assert_pose_close(pose_compose(p, Pose.identity()), p)


def test_yaw_90_rotates_x_to_y():
    p = Pose.from_xy_yaw(0.0, 0.0, math.pi / 2)
    np.testing.assert_allclose(transform_point(p, (1.0, 0.0, 0.0)), [0.0, 1.0, 0.0], atol=1e-12)


def test_inverse_of_identity():
    assert_pose_close(pose_inverse(Pose.identity()), Pose.identity(), atol=1e-15)


def test_group_laws_on_random_poses():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        a, b = random_pose(rng), random_pose(rng)
        assert_pose_close(pose_compose(a, pose_inverse(a)), Pose.identity())
        p = rng.normal(size=3)
        np.testing.assert_allclose(
            transform_point(pose_compose(a, b), p),
            transform_point(a, transform_point(b, p)),
            atol=1e-9,
        )


def test_transform_points_matches_single_point():
    rng = np.random.default_rng(6)
    pose = random_pose(rng)
    pts = rng.normal(size=(10, 3))
    np.testing.assert_allclose(transform_points(pose, pts), [transform_point(pose, p) for p in pts], atol=1e-12)


def test_non_unit_orientation_is_rejected():
    bad = Pose(np.zeros(3), Quaternion(1.0, 0.1, 0.0, 0.0))
    with pytest.raises(InvalidPoseError):
        pose_compose(bad, Pose.identity())
    with pytest.raises(InvalidPoseError):
        transform_point(bad, (1.0, 0.0, 0.0))


def test_retract_applies_world_frame_rotation():
    p = Pose.from_xy_yaw(1.0, 0.0, 0.2)
    out = p.retract([0.5, 0.0, 0.0, 0.0, 0.0, 0.3])
    np.testing.assert_allclose(out.position, [1.5, 0.0, 0.0])
    assert out.orientation.yaw() == pytest.approx(0.5)


class Test_rotation_angle_between:
    def test_same(self):
        q = quat_normalize(Quaternion(0.2, 0.4, -0.1, 0.8))
        assert rotation_angle_between(q, q) == 0.0

    def test_double_cover(self):
        q = quat_normalize(Quaternion(0.2, 0.4, -0.1, 0.8))
        assert rotation_angle_between(q, -q) == 0.0

    def test_quarter_turn(self):
        assert rotation_angle_between(Quaternion.identity(), Quaternion.from_yaw(math.pi / 2)) == pytest.approx(math.pi / 2, abs=1e-12)

    def test_symmetric(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            a, b = random_quaternion(rng), random_quaternion(rng)
            assert rotation_angle_between(a, b) == rotation_angle_between(b, a)
            assert 0.0 <= rotation_angle_between(a, b) <= math.pi

    def test_non_unit(self):
        with pytest.raises(InvalidPoseError):
            rotation_angle_between(Quaternion(2.0, 0.0, 0.0, 0.0), Quaternion.identity())


@pytest.mark.parametrize("t", [-1.0, math.inf, math.nan])
def test_timestamp_must_be_finite_and_non_negative(t):
    with pytest.raises(ValueError):
        Timestamped(t, Pose.identity())
