"""FMCW radar and IMU simulation.

The radar model follows the FMCW measurement chain: range is recovered from
the beat (IF) frequency, bearing from the inter-antenna phase difference.
Ranges are quantized to the range resolution before noise is applied.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation, Slerp

from .core import Pose, Timestamped, Vec3, as_vec3
from .errors import AliasingError, ConfigurationError, InsufficientTrajectoryError, OutOfRangeError
from .trajectory import trajectory_arrays

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0

_F_C = 76e9
_BANDWIDTH = 4e9
_SLOPE = 70e6 / 1e-6
_WAVELENGTH = SPEED_OF_LIGHT / _F_C


class RadarConfig(BaseModel):
    """Sensor parameters; defaults describe a 76 GHz single-chip radar."""

    model_config = ConfigDict(frozen=True)

    start_frequency: float = _F_C
    bandwidth: float = _BANDWIDTH
    slope: float = _SLOPE
    chirp_duration: float = _BANDWIDTH / _SLOPE
    wavelength: float = _WAVELENGTH
    antenna_spacing: float = _WAVELENGTH / 2.0
    range_resolution: float = 0.043
    max_range: float = 22.55
    max_radial_velocity: float = 2.28
    fov_azimuth: float = math.radians(120.0)
    max_points_per_frame: int = 63
    frame_rate: float = 20.0

    @model_validator(mode="after")
    def _check(self):
        if abs(self.slope * self.chirp_duration - self.bandwidth) > 1e-6 * self.bandwidth:
            raise ValueError("slope * chirp_duration must equal bandwidth")
        if self.range_resolution <= 0.0:
            raise ValueError("range_resolution must be positive")
        if self.max_points_per_frame < 1:
            raise ValueError("max_points_per_frame must be at least 1")
        for name in ("max_range", "wavelength", "antenna_spacing", "frame_rate", "fov_azimuth"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        return self


@dataclass(frozen=True, eq=False)
class RadarPoint:
    position: Vec3
    intensity: float
    radial_velocity: float


@dataclass(eq=False)
class RadarScan:
    """One radar frame stored column-wise; ``landmark_ids`` is -1 for ghosts."""

    t: float
    positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    intensities: np.ndarray = field(default_factory=lambda: np.zeros(0))
    radial_velocities: np.ndarray = field(default_factory=lambda: np.zeros(0))
    landmark_ids: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        n = len(self.positions)
        self.intensities = np.asarray(self.intensities, dtype=float).reshape(n)
        self.radial_velocities = np.asarray(self.radial_velocities, dtype=float).reshape(n)
        if self.landmark_ids is None:
            self.landmark_ids = np.full(n, -1, dtype=int)
        self.landmark_ids = np.asarray(self.landmark_ids, dtype=int).reshape(n)

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def points(self) -> list[RadarPoint]:
        return [
            RadarPoint(p.copy(), float(i), float(v))
            for p, i, v in zip(self.positions, self.intensities, self.radial_velocities)
        ]

    def subset(self, index) -> RadarScan:
        index = np.asarray(index, dtype=int)
        return RadarScan(
            self.t,
            self.positions[index],
            self.intensities[index],
            self.radial_velocities[index],
            self.landmark_ids[index],
        )


@dataclass(frozen=True, eq=False)
class ImuSample:
    t: float
    angular_velocity: Vec3
    linear_acceleration: Vec3

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.angular_velocity, self.linear_acceleration])


class SensorNoise(BaseModel):
    model_config = ConfigDict(frozen=True)

    range_sigma: float = 0.005
    azimuth_sigma: float = 0.001
    intensity_sigma: float = 0.1

    @model_validator(mode="after")
    def _check(self):
        if min(self.range_sigma, self.azimuth_sigma, self.intensity_sigma) < 0.0:
            raise ValueError("noise sigmas must be non-negative")
        return self


@dataclass(eq=False)
class Environment:
    """Static reflectors plus the clutter model applied to every frame."""

    landmarks: np.ndarray
    reflectivity: np.ndarray
    ghost_rate: float = 0.0
    dropout_rate: float = 0.0
    noise: SensorNoise = field(default_factory=SensorNoise)
    ghost_intensity_ceiling: float = 5e-4

    def __post_init__(self):
        self.landmarks = np.asarray(self.landmarks, dtype=float).reshape(-1, 3)
        self.reflectivity = np.asarray(self.reflectivity, dtype=float).reshape(len(self.landmarks))
        if not 0.0 <= self.ghost_rate <= 1.0 or not 0.0 <= self.dropout_rate <= 1.0:
            raise ConfigurationError("ghost_rate and dropout_rate must lie in [0, 1]")
        if np.any(self.reflectivity < 0.0):
            raise ConfigurationError("reflectivity must be non-negative")
        if self.ghost_intensity_ceiling < 0.0:
            raise ConfigurationError("ghost_intensity_ceiling must be non-negative")

    @classmethod
    def empty(cls) -> Environment:
        return cls(np.zeros((0, 3)), np.zeros(0))


def make_environment(
    bounds_min,
    bounds_max,
    density: float = 1.0,
    margin: float = 6.0,
    seed: int = 0,
    ghost_rate: float = 0.1,
    dropout_rate: float = 0.05,
    noise: SensorNoise | None = None,
    path=None,
    clearance: float = 0.3,
) -> Environment:
    """Scatter landmarks uniformly (``density`` per square metre) around a region.

    When ``path`` (an ``(N, 3)`` array of sensor positions) is given, landmarks
    closer than ``clearance`` to it in the ground plane are removed.
    """
    if density <= 0.0 or margin < 0.0:
        raise ConfigurationError("density must be positive and margin non-negative")
    rng = np.random.default_rng(seed)
    lo = np.asarray(bounds_min, dtype=float)[:2] - margin
    hi = np.asarray(bounds_max, dtype=float)[:2] + margin
    area = float(np.prod(hi - lo))
    count = max(int(round(density * area)), 1)
    xy = rng.uniform(lo, hi, size=(count, 2))
    z = rng.uniform(-0.2, 0.4, size=(count, 1))
    reflectivity = rng.uniform(1.0, 2.0, size=count)
    landmarks = np.hstack([xy, z])
    if path is not None and len(path):
        dist, _ = cKDTree(np.asarray(path, dtype=float)[:, :2]).query(xy)
        keep = dist >= clearance
        landmarks, reflectivity = landmarks[keep], reflectivity[keep]
    logger.debug("environment with %d landmarks over %.1f m^2", len(landmarks), area)
    return Environment(landmarks, reflectivity, ghost_rate, dropout_rate, noise or SensorNoise())


# ----- measurement model -----

def range_from_if(f_if: float, cfg: RadarConfig) -> float:
    """Target range from the IF beat frequency: ``d = f_if * c / (2 S)``."""
    if f_if < 0.0:
        raise ValueError(f"IF frequency must be non-negative, got {f_if}")
    d = f_if * SPEED_OF_LIGHT / (2.0 * cfg.slope)
    if d > cfg.max_range:
        raise OutOfRangeError(f"range {d:.3f} m exceeds max_range {cfg.max_range} m")
    return d


def if_from_range(d, cfg: RadarConfig):
    return 2.0 * cfg.slope * np.asarray(d, dtype=float) / SPEED_OF_LIGHT


def aoa_from_phase(omega: float, cfg: RadarConfig) -> float:
    """Angle of arrival from the phase difference of an antenna pair."""
    arg = cfg.wavelength * omega / (2.0 * math.pi * cfg.antenna_spacing)
    if abs(arg) > 1.0 + 1e-12:
        raise AliasingError(f"phase {omega} aliases (asin argument {arg:.3f})")
    return math.asin(max(-1.0, min(1.0, arg)))


def phase_from_aoa(theta, cfg: RadarConfig):
    return 2.0 * math.pi * cfg.antenna_spacing * np.sin(theta) / cfg.wavelength


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, (tuple, list)):
        return np.random.default_rng(np.random.SeedSequence(list(seed)))
    return np.random.default_rng(seed)


def simulate_scan(
    env: Environment, sensor_pose: Pose, sensor_velocity, cfg: RadarConfig, rng_seed, t: float = 0.0
) -> RadarScan:
    """Render one radar frame of ``env`` seen from ``sensor_pose``.

    ``rng_seed`` may be an int, a ``(base_seed, frame_index)`` tuple or a
    numpy Generator. All random draws are made for every landmark so the
    output only depends on the seed.
    """
    if not sensor_pose.orientation.is_unit():
        raise ConfigurationError("sensor orientation must be unit-norm")
    rng = _rng(rng_seed)
    velocity = as_vec3(sensor_velocity)
    n = len(env.landmarks)
    if n == 0:
        return RadarScan(t)

    noise = env.noise
    range_noise = rng.normal(0.0, 1.0, n) * noise.range_sigma
    azimuth_noise = rng.normal(0.0, 1.0, n) * noise.azimuth_sigma
    intensity_noise = np.exp(rng.normal(0.0, 1.0, n) * noise.intensity_sigma)
    dropped = rng.random(n) < env.dropout_rate
    ghost_draw = rng.random(n) < env.ghost_rate
    ghost_stretch = rng.uniform(1.3, 2.0, n)
    ghost_level = rng.uniform(0.0, 1.0, n)

    rotation = sensor_pose.rotation_matrix()
    rel = env.landmarks - sensor_pose.position
    local = rel @ rotation
    true_range = np.linalg.norm(local, axis=1)
    safe_range = np.where(true_range > 0.0, true_range, 1.0)
    azimuth = np.arctan2(local[:, 1], local[:, 0])
    elevation = np.arcsin(np.clip(local[:, 2] / safe_range, -1.0, 1.0))

    visible = (
        (true_range > 0.0)
        & (true_range <= cfg.max_range)
        & (local[:, 0] > 0.0)
        & (np.abs(azimuth) <= 0.5 * cfg.fov_azimuth)
        & ~dropped
    )
    idx = np.flatnonzero(visible)

    # range via the IF frequency, quantized to the range bin, then jittered
    measured = if_from_range(true_range[idx], cfg) * SPEED_OF_LIGHT / (2.0 * cfg.slope)
    measured = np.round(measured / cfg.range_resolution) * cfg.range_resolution + range_noise[idx]
    in_range = (measured > 0.0) & (measured <= cfg.max_range)
    idx, measured = idx[in_range], measured[in_range]
    # bearing recovered from the antenna phase difference
    bearing = np.array([aoa_from_phase(w, cfg) for w in phase_from_aoa(azimuth[idx], cfg)])
    bearing = bearing + azimuth_noise[idx]
    el = elevation[idx]
    directions = np.stack([np.cos(el) * np.cos(bearing), np.cos(el) * np.sin(bearing), np.sin(el)], axis=1)
    positions = directions * measured[:, None]

    line_of_sight = rel[idx] / safe_range[idx, None]
    radial = np.clip(-(line_of_sight @ velocity), -cfg.max_radial_velocity, cfg.max_radial_velocity)
    intensity = env.reflectivity[idx] / safe_range[idx] ** 4 * intensity_noise[idx]
    ids = idx.copy()

    ghosts = idx[ghost_draw[idx]]
    if len(ghosts):
        sel = ghost_draw[idx]
        ghost_range = measured[sel] * ghost_stretch[ghosts]
        keep = ghost_range <= cfg.max_range
        positions = np.vstack([positions, directions[sel][keep] * ghost_range[keep, None]])
        radial = np.concatenate([radial, radial[sel][keep]])
        intensity = np.concatenate([intensity, env.ghost_intensity_ceiling * ghost_level[ghosts][keep]])
        ids = np.concatenate([ids, np.full(int(keep.sum()), -1)])

    if len(intensity) > cfg.max_points_per_frame:
        order = np.argsort(-intensity, kind="stable")[: cfg.max_points_per_frame]
        keep_idx = np.sort(order)
        positions, radial, intensity, ids = positions[keep_idx], radial[keep_idx], intensity[keep_idx], ids[keep_idx]

    return RadarScan(t, positions, intensity, radial, ids)


def simulate_imu(
    traj: list[Timestamped[Pose]],
    rate: float,
    gyro_bias=(0.0, 0.0, 0.0),
    noise_sigma=(0.0, 0.0, 0.0),
    rng_seed=0,
    accel_bias=(0.0, 0.0, 0.0),
    accel_noise_sigma=(0.0, 0.0, 0.0),
) -> list[ImuSample]:
    """Body-frame gyro and gravity-free accelerometer readings along ``traj``."""
    if len(traj) < 2:
        raise InsufficientTrajectoryError("at least two poses are required to simulate an IMU")
    if rate <= 0.0:
        raise ConfigurationError("IMU rate must be positive")
    t, pos, quat = trajectory_arrays(traj)
    if np.any(np.diff(t) <= 0.0):
        raise InsufficientTrajectoryError("trajectory timestamps must be strictly increasing")

    rng = _rng(rng_seed)
    rotations = Rotation.from_quat(quat[:, [1, 2, 3, 0]])
    slerp = Slerp(t, rotations)
    spline = CubicSpline(t, pos, axis=0, bc_type="natural")

    count = int(math.floor((t[-1] - t[0]) * rate + 1e-9)) + 1
    # the last sample may overshoot t[-1] by a rounding error
    times = np.minimum(t[0] + np.arange(count) / rate, t[-1])
    half = 0.5 / rate
    lo = np.clip(times - half, t[0], t[-1])
    hi = np.clip(times + half, t[0], t[-1])
    gyro = (slerp(lo).inv() * slerp(hi)).as_rotvec() / (hi - lo)[:, None]
    accel_world = spline(times, 2)
    accel = np.einsum("nji,nj->ni", slerp(times).as_matrix(), accel_world)

    gyro = gyro + as_vec3(gyro_bias) + rng.normal(0.0, 1.0, (count, 3)) * as_vec3(noise_sigma)
    accel = accel + as_vec3(accel_bias) + rng.normal(0.0, 1.0, (count, 3)) * as_vec3(accel_noise_sigma)
    return [ImuSample(float(ti), g, a) for ti, g, a in zip(times, gyro, accel)]


def imu_arrays(samples: list[ImuSample]) -> tuple[np.ndarray, np.ndarray]:
    """``(t[N], readings[N, 6])`` with readings ordered ``wx, wy, wz, ax, ay, az``."""
    t = np.array([s.t for s in samples], dtype=float)
    data = np.array([s.as_array() for s in samples], dtype=float).reshape(-1, 6)
    return t, data


def imu_from_arrays(t, data) -> list[ImuSample]:
    data = np.asarray(data, dtype=float).reshape(-1, 6)
    return [ImuSample(float(ti), row[:3].copy(), row[3:].copy()) for ti, row in zip(t, data)]
