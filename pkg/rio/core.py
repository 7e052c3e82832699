"""Geometric value types and quaternion / SE(3) algebra.

Convention: Hamilton product, scalar-first layout ``(w, x, y, z)``. A
quaternion ``q`` rotates a vector ``v`` as ``q * (0, v) * conj(q)`` and a pose
maps sensor-frame points into the world frame. Normalized quaternions are
canonicalized to ``w >= 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Generic, TypeVar

import numpy as np
import numpy.typing as npt
from scipy.spatial.transform import Rotation

from .errors import DegenerateQuaternionError, InvalidPoseError

Vec3 = npt.NDArray[np.float64]

UNIT_TOLERANCE = 1e-6

T = TypeVar("T")


def vec3(x: float = 0.0, y: float = 0.0, z: float = 0.0) -> Vec3:
    return np.array([x, y, z], dtype=float)


def as_vec3(value) -> Vec3:
    v = np.asarray(value, dtype=float).reshape(3)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"non-finite vector: {v}")
    return v


def skew(v) -> np.ndarray:
    """Cross-product matrix: ``skew(a) @ b == cross(a, b)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


@dataclass(frozen=True)
class Quaternion:
    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    @classmethod
    def identity(cls) -> Quaternion:
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, arr) -> Quaternion:
        w, x, y, z = (float(c) for c in np.asarray(arr, dtype=float).reshape(4))
        return cls(w, x, y, z)

    @classmethod
    def from_rotvec(cls, rotvec) -> Quaternion:
        return cls.from_array(rotvec_to_quat_array(np.asarray(rotvec, dtype=float)))

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> Quaternion:
        axis = np.asarray(axis, dtype=float)
        return cls.from_rotvec(axis / np.linalg.norm(axis) * angle)

    @classmethod
    def from_yaw(cls, yaw: float) -> Quaternion:
        return cls(math.cos(yaw / 2.0), 0.0, 0.0, math.sin(yaw / 2.0))

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def norm(self) -> float:
        return math.sqrt(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z)

    def conjugate(self) -> Quaternion:
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    def is_unit(self, tol: float = UNIT_TOLERANCE) -> bool:
        return abs(self.norm() - 1.0) <= tol

    def __mul__(self, other: Quaternion) -> Quaternion:
        return quat_multiply(self, other)

    def __neg__(self) -> Quaternion:
        return Quaternion(-self.w, -self.x, -self.y, -self.z)

    def rotation_matrix(self) -> np.ndarray:
        return quat_array_to_matrix(self.as_array())

    def rotate(self, v) -> Vec3:
        return self.rotation_matrix() @ np.asarray(v, dtype=float)

    def as_rotvec(self) -> Vec3:
        return quat_array_to_rotvec(self.as_array())

    def yaw(self) -> float:
        return math.atan2(
            2.0 * (self.w * self.z + self.x * self.y),
            1.0 - 2.0 * (self.y * self.y + self.z * self.z),
        )


def quat_multiply(a: Quaternion, b: Quaternion) -> Quaternion:
    return Quaternion(
        a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    )


def quat_normalize(q: Quaternion) -> Quaternion:
    n = q.norm()
    if n == 0.0 or not math.isfinite(n):
        raise DegenerateQuaternionError(f"cannot normalize quaternion {q}")
    out = Quaternion(q.w / n, q.x / n, q.y / n, q.z / n)
    return -out if out.w < 0.0 else out


def rotation_angle_between(a: Quaternion, b: Quaternion) -> float:
    """Geodesic rotation angle in [0, pi] between two unit quaternions."""
    for q in (a, b):
        if not q.is_unit():
            raise InvalidPoseError(f"quaternion {q} is not unit-norm")
    qa, qb = a.as_array(), b.as_array()
    sign = 1.0 if float(qa @ qb) >= 0.0 else -1.0
    diff = float(np.linalg.norm(qa - sign * qb))
    total = float(np.linalg.norm(qa + sign * qb))
    return 4.0 * math.atan2(diff, total)


# ----- array-level helpers (batched over a leading axis) -----

def quat_multiply_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=float), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=float), -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_array_to_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    m[..., 0, 1] = 2.0 * (x * y - w * z)
    m[..., 0, 2] = 2.0 * (x * z + w * y)
    m[..., 1, 0] = 2.0 * (x * y + w * z)
    m[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    m[..., 1, 2] = 2.0 * (y * z - w * x)
    m[..., 2, 0] = 2.0 * (x * z - w * y)
    m[..., 2, 1] = 2.0 * (y * z + w * x)
    m[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return m


def rotvec_to_quat_array(rotvec: np.ndarray) -> np.ndarray:
    rotvec = np.asarray(rotvec, dtype=float)
    angle = np.linalg.norm(rotvec, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(half)/angle with its Taylor series near zero
    small = angle < 1e-8
    safe = np.where(small, 1.0, angle)
    scale = np.where(small, 0.5 - angle**2 / 48.0, np.sin(half) / safe)
    return np.concatenate([np.cos(half), rotvec * scale], axis=-1)


def quat_array_to_rotvec(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    q = np.where(q[..., :1] < 0.0, -q, q)
    vec = q[..., 1:]
    s = np.linalg.norm(vec, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, q[..., :1])
    small = s < 1e-12
    scale = np.where(small, 2.0, angle / np.where(small, 1.0, s))
    return vec * scale


def quat_from_matrix(m) -> Quaternion:
    x, y, z, w = Rotation.from_matrix(np.asarray(m, dtype=float)).as_quat()
    return quat_normalize(Quaternion(w, x, y, z))


def normalize_quat_array(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n == 0.0) or not np.all(np.isfinite(n)):
        raise DegenerateQuaternionError("cannot normalize zero-norm quaternion")
    return q / n


# ----- poses -----

@dataclass(frozen=True, eq=False)
class Pose:
    position: Vec3
    orientation: Quaternion

    def __post_init__(self):
        pos = as_vec3(self.position).copy()
        pos.setflags(write=False)
        object.__setattr__(self, "position", pos)

    @classmethod
    def identity(cls) -> Pose:
        return cls(vec3(), Quaternion.identity())

    @classmethod
    def from_xy_yaw(cls, x: float, y: float, yaw: float, z: float = 0.0) -> Pose:
        return cls(vec3(x, y, z), Quaternion.from_yaw(yaw))

    def rotation_matrix(self) -> np.ndarray:
        return self.orientation.rotation_matrix()

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix()
        m[:3, 3] = self.position
        return m

    def retract(self, delta) -> Pose:
        """Apply a 6-vector increment (translation, world-frame rotation vector)."""
        delta = np.asarray(delta, dtype=float)
        dq = Quaternion.from_rotvec(delta[3:])
        return Pose(self.position + delta[:3], quat_normalize(dq * self.orientation))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.position, self.orientation.as_array()])


def _check_pose(p: Pose) -> None:
    if not p.orientation.is_unit():
        raise InvalidPoseError(f"pose orientation {p.orientation} is not unit-norm")


def pose_compose(a: Pose, b: Pose) -> Pose:
    _check_pose(a)
    _check_pose(b)
    return Pose(a.position + a.rotation_matrix() @ b.position, quat_normalize(a.orientation * b.orientation))


def pose_inverse(a: Pose) -> Pose:
    _check_pose(a)
    inv = a.orientation.conjugate()
    return Pose(-(inv.rotation_matrix() @ a.position), quat_normalize(inv))


def transform_point(a: Pose, p) -> Vec3:
    _check_pose(a)
    return a.rotation_matrix() @ as_vec3(p) + a.position


def transform_points(a: Pose, points: np.ndarray) -> np.ndarray:
    """Batched ``transform_point`` over an ``(N, 3)`` array."""
    _check_pose(a)
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    return points @ a.rotation_matrix().T + a.position


@dataclass(frozen=True)
class Timestamped(Generic[T]):
    t: float
    value: T

    def __post_init__(self):
        if not math.isfinite(self.t) or self.t < 0.0:
            raise ValueError(f"invalid timestamp {self.t}")
