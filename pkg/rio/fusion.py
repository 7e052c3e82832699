"""Unscented Kalman filter over ``[p, q, v, b]`` (13 components).

The quaternion is carried as four raw state components and renormalized
after every prediction and correction. Orientation is propagated with the
bias-compensated gyro increment; position with the pluggable motion model.
The measurement is the registered pose ``[p, q]``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.linalg import LinAlgError, cho_factor, cho_solve, cholesky

from .core import (
    Pose,
    Quaternion,
    Timestamped,
    as_vec3,
    quat_multiply_array,
    quat_normalize,
)
from .errors import DegenerateCovarianceError, InsufficientTrajectoryError
from .motion_model import INPUT_DIM, MotionModel
from .radar_sim import ImuSample

logger = logging.getLogger(__name__)

STATE_DIM = 13
P, Q, V, B = slice(0, 3), slice(3, 7), slice(7, 10), slice(10, 13)
JITTER = 1e-12
MAX_JITTER_ATTEMPTS = 3


class UtParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    alpha: float = 0.1
    beta: float = 2.0
    kappa: float = 0.0

    @model_validator(mode="after")
    def _check(self):
        if not self.alpha > 0.0:
            raise ValueError("alpha must be positive")
        return self

    def lam(self, n: int) -> float:
        return self.alpha**2 * (n + self.kappa) - n

    def weights(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        lam = self.lam(n)
        if not n + lam > 0.0:
            raise ValueError(f"n + lambda must be positive, got {n + lam}")
        wm = np.full(2 * n + 1, 0.5 / (n + lam))
        wm[0] = 1.0 - wm[1:].sum()
        wc = wm.copy()
        wc[0] = lam / (n + lam) + 1.0 - self.alpha**2 + self.beta
        return wm, wc


class UkfNoise(BaseModel):
    """Per-frame process noise and pose measurement noise (standard deviations)."""

    model_config = ConfigDict(frozen=True)

    position: float = 0.005
    quaternion: float = 0.001
    velocity: float = 0.02
    bias_random_walk: float = 0.0
    measurement_position: float = 0.02
    measurement_rotation: float = 0.01

    @model_validator(mode="after")
    def _check(self):
        if min(self.model_dump().values()) < 0.0:
            raise ValueError("noise standard deviations must be non-negative")
        return self

    def process(self) -> np.ndarray:
        diag = np.concatenate([
            np.full(3, self.position**2),
            np.full(4, self.quaternion**2),
            np.full(3, self.velocity**2),
            np.full(3, self.bias_random_walk**2),
        ])
        return np.diag(diag)

    def measurement(self) -> np.ndarray:
        return np.diag(np.concatenate([np.full(3, self.measurement_position**2), np.full(3, self.measurement_rotation**2)]))


@dataclass(frozen=True, eq=False)
class UkfState:
    p: np.ndarray
    q: Quaternion
    v: np.ndarray
    b: np.ndarray
    covariance: np.ndarray
    corrected: bool = True

    @classmethod
    def from_mean(cls, mean, covariance, corrected: bool = True) -> UkfState:
        mean = np.asarray(mean, dtype=float)
        return cls(mean[P].copy(), Quaternion.from_array(mean[Q]), mean[V].copy(), mean[B].copy(), np.asarray(covariance, dtype=float), corrected)

    @classmethod
    def initial(cls, pose: Pose, velocity=(0.0, 0.0, 0.0), bias=(0.0, 0.0, 0.0), sigmas=(0.01, 0.005, 0.05, 0.01)) -> UkfState:
        sp, sq, sv, sb = sigmas
        cov = np.diag(np.concatenate([np.full(3, sp**2), np.full(4, sq**2), np.full(3, sv**2), np.full(3, sb**2)]))
        return cls(pose.position.copy(), pose.orientation, as_vec3(velocity), as_vec3(bias), cov)

    @property
    def mean(self) -> np.ndarray:
        return np.concatenate([self.p, self.q.as_array(), self.v, self.b])

    @property
    def pose(self) -> Pose:
        return Pose(self.p, self.q)


@dataclass(frozen=True, eq=False)
class PoseMeasurement:
    pose: Pose
    noise: np.ndarray = field(default_factory=lambda: UkfNoise().measurement())

    def __post_init__(self):
        noise = np.asarray(self.noise, dtype=float)
        if noise.shape != (6, 6) or np.any(np.linalg.eigvalsh(0.5 * (noise + noise.T)) < -1e-12):
            raise ValueError("measurement noise must be a 6x6 PSD matrix")
        object.__setattr__(self, "noise", noise)


# ----- unscented transform -----

def _sqrt_psd(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, adding ``JITTER * I`` up to three times on failure."""
    if not np.any(cov):
        return np.zeros_like(cov)
    jittered = cov.copy()
    for attempt in range(MAX_JITTER_ATTEMPTS + 1):
        try:
            return cholesky(jittered, lower=True)
        except LinAlgError:
            if attempt == MAX_JITTER_ATTEMPTS:
                break
            jittered = jittered + JITTER * np.eye(len(cov))
    raise DegenerateCovarianceError("covariance is not positive definite after jitter")


def sigma_points(mean, cov, ut: UtParams | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(points[2n+1, n], mean weights, covariance weights)``."""
    ut = ut or UtParams()
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    n = len(mean)
    if cov.shape != (n, n) or not np.all(np.isfinite(cov)):
        raise DegenerateCovarianceError(f"covariance must be a finite {n}x{n} matrix")
    lam = ut.lam(n)
    root = _sqrt_psd((n + lam) * cov)
    points = np.vstack([mean, mean + root.T, mean - root.T])
    wm, wc = ut.weights(n)
    return points, wm, wc


def _recombine(points: np.ndarray, wm: np.ndarray, wc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = wm @ points
    dev = points - mean
    return mean, (wc[:, None] * dev).T @ dev


def _condition(cov: np.ndarray) -> np.ndarray:
    """Symmetrize and clip negative eigenvalues."""
    sym = 0.5 * (cov + cov.T)
    w, v = np.linalg.eigh(sym)
    if w[0] >= 0.0:
        return sym
    out = (v * np.maximum(w, 0.0)) @ v.T
    return 0.5 * (out + out.T)


def _same_hemisphere(points: np.ndarray, reference: np.ndarray) -> np.ndarray:
    flip = points[:, Q] @ reference < 0.0
    points = points.copy()
    points[flip, Q] *= -1.0
    return points


def _normalize_state(mean: np.ndarray, cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = mean.copy()
    cov = cov.copy()
    raw = Quaternion.from_array(mean[Q])
    q = quat_normalize(raw)
    if float(raw.as_array() @ q.as_array()) < 0.0:
        # canonical w >= 0: flip the quaternion block of the covariance too
        cov[Q, :] *= -1.0
        cov[:, Q] *= -1.0
    mean[Q] = q.as_array()
    return mean, _condition(cov)


# ----- prediction -----

def gyro_increment(a, b_a, dt: float) -> Quaternion:
    """First-order quaternion increment for the bias-compensated rate ``a - b_a`` over ``dt``."""
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    w = (as_vec3(a) - as_vec3(b_a)) * (0.5 * dt)
    return quat_normalize(Quaternion(1.0, *w))


def _gyro_increments(gyro: np.ndarray, biases: np.ndarray, dt: float) -> np.ndarray:
    """Integrated increment per sigma point over the window; readings split ``dt`` evenly."""
    out = np.tile([1.0, 0.0, 0.0, 0.0], (len(biases), 1))
    if len(gyro) == 0:
        return out
    step = dt / len(gyro)
    for reading in gyro:
        half = (reading - biases) * (0.5 * step)
        dq = np.concatenate([np.ones((len(biases), 1)), half], axis=1)
        dq /= np.linalg.norm(dq, axis=1, keepdims=True)
        out = quat_multiply_array(out, dq)
    return out


def _window_array(imu_window) -> np.ndarray:
    if isinstance(imu_window, np.ndarray):
        return imu_window.reshape(-1, INPUT_DIM)
    return np.array([s.as_array() for s in imu_window], dtype=float).reshape(-1, INPUT_DIM)


def ukf_predict(
    state: UkfState,
    imu_window,
    model: MotionModel,
    dt: float,
    ut: UtParams | None = None,
    noise: UkfNoise | None = None,
) -> UkfState:
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    noise = noise or UkfNoise()
    window = _window_array(imu_window)
    mean = state.mean
    points, wm, wc = sigma_points(mean, state.covariance, ut)
    points = _same_hemisphere(points, mean[Q])

    f = model.bind(window, dt)
    propagated = points.copy()
    propagated[:, P] += f(points)
    increments = _gyro_increments(window[:, :3], points[:, B], dt)
    propagated[:, Q] = quat_multiply_array(points[:, Q], increments)

    new_mean, new_cov = _recombine(propagated, wm, wc)
    new_mean, new_cov = _normalize_state(new_mean, new_cov + noise.process())
    return UkfState.from_mean(new_mean, new_cov, corrected=False)


# ----- correction -----

def _rotation_to_quaternion_jacobian(q: np.ndarray) -> np.ndarray:
    """``dq / dtheta`` for a small body-frame rotation applied to ``q``."""
    w, x, y, z = q
    return 0.5 * np.array([[-x, -y, -z], [w, -z, y], [z, w, -x], [-y, x, w]])


def measurement_noise_7(noise6: np.ndarray, q: np.ndarray) -> np.ndarray:
    m = np.zeros((7, 6))
    m[:3, :3] = np.eye(3)
    m[3:, 3:] = _rotation_to_quaternion_jacobian(q)
    return m @ noise6 @ m.T + JITTER * np.eye(7)


def ukf_correct(state: UkfState, z: PoseMeasurement, ut: UtParams | None = None) -> UkfState:
    """Pose update through ``h(x) = [p, q]``; skipped when the innovation covariance is not PD."""
    mean = state.mean
    try:
        points, wm, wc = sigma_points(mean, state.covariance, ut)
    except DegenerateCovarianceError as exc:
        logger.warning("skipping update: %s", exc)
        return replace(state, corrected=False)
    points = _same_hemisphere(points, mean[Q])

    zq = z.pose.orientation.as_array()
    if zq @ mean[Q] < 0.0:
        zq = -zq
    measured = np.concatenate([z.pose.position, zq])

    predicted = points[:, :7]
    z_mean, s = _recombine(predicted, wm, wc)
    s = 0.5 * (s + s.T) + measurement_noise_7(z.noise, zq)
    cross = (wc[:, None] * (points - wm @ points)).T @ (predicted - z_mean)
    if not np.all(np.isfinite(s)):
        logger.warning("skipping update: non-finite innovation covariance")
        return replace(state, corrected=False)
    try:
        factor = cho_factor(s, lower=True)
    except LinAlgError:
        logger.warning("skipping update: innovation covariance is not positive definite")
        return replace(state, corrected=False)

    gain = cho_solve(factor, cross.T).T
    new_mean = mean + gain @ (measured - z_mean)
    new_cov = state.covariance - gain @ s @ gain.T
    new_mean, new_cov = _normalize_state(new_mean, new_cov)
    return UkfState.from_mean(new_mean, new_cov, corrected=True)


# ----- inertial baseline -----

def dead_reckon(imu: list[ImuSample], initial: Pose, initial_velocity=(0.0, 0.0, 0.0)) -> list[Timestamped[Pose]]:
    """Gyro orientation integration with double-integrated (gravity-free) acceleration."""
    if len(imu) < 2:
        raise InsufficientTrajectoryError("dead reckoning needs at least two IMU samples")
    q = initial.orientation
    p = initial.position.copy()
    v = as_vec3(initial_velocity).copy()
    out = [Timestamped(imu[0].t, Pose(p, q))]
    for prev, cur in zip(imu[:-1], imu[1:]):
        dt = cur.t - prev.t
        if not dt > 0.0:
            raise InsufficientTrajectoryError("IMU timestamps must be strictly increasing")
        a = q.rotate(prev.linear_acceleration)
        p = p + v * dt + 0.5 * a * dt * dt
        v = v + a * dt
        q = quat_normalize(q * gyro_increment(prev.angular_velocity, np.zeros(3), dt))
        out.append(Timestamped(cur.t, Pose(p, q)))
    return out


def covariance_trace(state: UkfState) -> float:
    return float(math.fsum(np.diag(state.covariance)))
