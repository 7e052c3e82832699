"""Planar ground-truth trajectory generation.

Trajectories are built from a closed-form path (piecewise constant curvature
or a lemniscate) traversed with a speed profile, then sampled at a fixed rate.
Every pose lies in the z = 0 plane but is carried as a full 3D ``Pose``.
"""

from __future__ import annotations

import math
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.optimize import brentq

from .core import Pose, Quaternion, Timestamped, vec3
from .errors import ConfigurationError


class TrajectoryKind(str, Enum):
    LINE = "line"
    ARC = "arc"
    INFINITY_LOOP = "infinity_loop"
    MIXED = "mixed"
    SHARP_TURNS = "sharp_turns"


class TrajectoryParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: TrajectoryKind = TrajectoryKind.MIXED
    length: float = 10.23
    speed: float = 0.5
    speed_min: float = 0.40
    speed_max: float = 0.60
    speed_period: float = 8.0
    radius: float = 2.0
    arc_angle: float = math.pi / 2
    lobe: float = 2.0
    turn_rate: float = 0.40
    rate: float = 20.0

    @model_validator(mode="after")
    def _check(self):
        positives = ("length", "speed", "speed_min", "speed_max", "speed_period", "radius", "lobe", "turn_rate", "rate")
        for name in positives:
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if self.speed_min > self.speed_max:
            raise ValueError("speed_min must not exceed speed_max")
        if self.arc_angle == 0.0:
            raise ValueError("arc_angle must be non-zero")
        return self


class _SegmentPath:
    """Concatenation of (length, curvature) segments starting at the origin facing +x."""

    def __init__(self, segments: list[tuple[float, float]]):
        self.segments = [(float(length), float(k)) for length, k in segments if length > 0.0]
        self._starts = []
        x = y = heading = s = 0.0
        for length, k in self.segments:
            self._starts.append((s, x, y, heading))
            x, y, heading = self._advance(x, y, heading, k, length)
            s += length
        self.total_length = s

    @staticmethod
    def _advance(x, y, heading, k, u):
        if k == 0.0:
            return x + u * math.cos(heading), y + u * math.sin(heading), heading
        h = heading + k * u
        return x + (math.sin(h) - math.sin(heading)) / k, y - (math.cos(h) - math.cos(heading)) / k, h

    def evaluate(self, s: float) -> tuple[float, float, float]:
        s = min(max(s, 0.0), self.total_length)
        idx = len(self.segments) - 1
        for i, (s0, *_rest) in enumerate(self._starts):
            if s < s0:
                idx = i - 1
                break
        s0, x, y, heading = self._starts[idx]
        return self._advance(x, y, heading, self.segments[idx][1], s - s0)


class _LemniscatePath:
    """Figure-eight (lemniscate of Gerono) with half-width ``a``; closes on itself."""

    def __init__(self, a: float, samples: int = 20001):
        self.a = a
        self._tau = np.linspace(0.0, 2.0 * math.pi, samples)
        dx, dy = self._derivative(self._tau)
        speed = np.hypot(dx, dy)
        steps = 0.5 * (speed[1:] + speed[:-1]) * np.diff(self._tau)
        self._s = np.concatenate([[0.0], np.cumsum(steps)])
        self.total_length = float(self._s[-1])

    def _derivative(self, tau):
        return self.a * np.cos(tau), self.a * np.cos(2.0 * tau)

    def evaluate(self, s: float) -> tuple[float, float, float]:
        tau = float(np.interp(s, self._s, self._tau))
        dx, dy = self._derivative(tau)
        return self.a * math.sin(tau), 0.5 * self.a * math.sin(2.0 * tau), math.atan2(dy, dx)


def _build_path(params: TrajectoryParams):
    kind = params.kind
    if kind is TrajectoryKind.LINE:
        return _SegmentPath([(params.length, 0.0)])
    if kind is TrajectoryKind.ARC:
        sign = 1.0 if params.arc_angle > 0 else -1.0
        return _SegmentPath([(abs(params.arc_angle) * params.radius, sign / params.radius)])
    if kind is TrajectoryKind.INFINITY_LOOP:
        return _LemniscatePath(params.lobe)
    if kind is TrajectoryKind.MIXED:
        # fractions of the total length with turn radii of 1.5 m and 2.0 m
        shape = [(0.20, 0.0), (0.15, 1 / 1.5), (0.15, 0.0), (0.12, -1 / 1.5), (0.18, 0.0), (0.20, 1 / 2.0)]
        return _SegmentPath([(f * params.length, k) for f, k in shape])
    if kind is TrajectoryKind.SHARP_TURNS:
        radius = params.speed_max / params.turn_rate
        turn = 0.5 * math.pi * radius
        straight = (params.length - 3 * turn) / 4.0
        if straight <= 0.0:
            raise ConfigurationError(f"length {params.length} m too short for three turns of radius {radius:.2f} m")
        k = 1.0 / radius
        return _SegmentPath([(straight, 0.0), (turn, k), (straight, 0.0), (turn, -k), (straight, 0.0), (turn, k), (straight, 0.0)])
    raise ConfigurationError(f"unknown trajectory kind {kind}")


class _SpeedProfile:
    def __init__(self, params: TrajectoryParams, length: float):
        if params.kind is TrajectoryKind.MIXED:
            self.mid = 0.5 * (params.speed_min + params.speed_max)
            self.amp = 0.5 * (params.speed_max - params.speed_min)
            self.period = params.speed_period
            lo, hi = length / params.speed_max, length / params.speed_min
            self.duration = length / self.mid if hi - lo < 1e-12 else brentq(lambda t: self.distance(t) - length, lo, hi)
        else:
            self.mid, self.amp, self.period = params.speed, 0.0, 1.0
            self.duration = length / params.speed

    def distance(self, t: float) -> float:
        w = 2.0 * math.pi / self.period
        return self.mid * t + self.amp / w * (1.0 - math.cos(w * t))


def generate_trajectory(kind: TrajectoryKind | str, params: TrajectoryParams | None = None) -> list[Timestamped[Pose]]:
    """Sample a ground-truth trajectory at ``params.rate``; the final sample lands on the end of the path."""
    try:
        params = (params or TrajectoryParams()).model_copy(update={"kind": TrajectoryKind(kind)})
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc
    path = _build_path(params)
    profile = _SpeedProfile(params, path.total_length)
    duration = profile.duration
    if not duration > 0.0:
        raise ConfigurationError("trajectory duration must be positive")

    count = math.ceil(duration * params.rate - 1e-9)
    times = [k / params.rate for k in range(count)] + [duration]
    out = []
    for t in times:
        s = path.total_length if t == duration else profile.distance(t)
        x, y, heading = path.evaluate(s)
        out.append(Timestamped(t, Pose(vec3(x, y, 0.0), Quaternion.from_yaw(heading))))
    return out


def trajectory_arrays(traj: list[Timestamped[Pose]]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split a trajectory into ``(t[N], positions[N,3], quaternions[N,4])``."""
    t = np.array([s.t for s in traj], dtype=float)
    pos = np.array([s.value.position for s in traj], dtype=float).reshape(-1, 3)
    quat = np.array([s.value.orientation.as_array() for s in traj], dtype=float).reshape(-1, 4)
    return t, pos, quat


def trajectory_from_arrays(t, positions, quaternions) -> list[Timestamped[Pose]]:
    return [Timestamped(float(ti), Pose(p, Quaternion.from_array(q))) for ti, p, q in zip(t, positions, quaternions)]


def path_length(traj: list[Timestamped[Pose]]) -> float:
    _, pos, _ = trajectory_arrays(traj)
    return float(np.linalg.norm(np.diff(pos, axis=0), axis=1).sum()) if len(pos) > 1 else 0.0


def trajectory_velocities(traj: list[Timestamped[Pose]]) -> np.ndarray:
    """World-frame velocities by finite differences (one-sided at the ends)."""
    t, pos, _ = trajectory_arrays(traj)
    if len(t) < 2:
        return np.zeros_like(pos)
    return np.gradient(pos, t, axis=0)
