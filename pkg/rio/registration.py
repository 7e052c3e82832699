"""Scan-to-map registration: NDT with analytic derivatives, and point-to-point ICP.

Pose increments are 6-vectors ``(dt, dphi)`` applied through ``Pose.retract``:
a scan point ``p`` lands at ``Exp(dphi) R p + t + dt`` in the world frame.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.spatial import cKDTree

from .core import Pose, quat_from_matrix, quat_normalize, skew, transform_points
from .errors import InsufficientCorrespondenceError, SingularStepError, ZeroOverlapError
from .radar_sim import RadarScan

logger = logging.getLogger(__name__)

MIN_CELL_POINTS = 3


class NdtOptions(BaseModel):
    model_config = ConfigDict(frozen=True)

    cell_size: float = 0.5
    regularization: float = 0.1
    max_iterations: int = 30
    translation_tolerance: float = 1e-4
    rotation_tolerance: float = 1e-4
    max_translation_step: float = 0.2
    max_rotation_step: float = 0.1
    min_match_fraction: float = 0.3
    max_line_search: int = 12

    @model_validator(mode="after")
    def _check(self):
        if self.cell_size <= 0.0 or self.regularization <= 0.0:
            raise ValueError("cell_size and regularization must be positive")
        if self.max_iterations < 0 or self.max_line_search < 0:
            raise ValueError("iteration limits must be non-negative")
        if not 0.0 <= self.min_match_fraction <= 1.0:
            raise ValueError("min_match_fraction must lie in [0, 1]")
        return self


class IcpOptions(BaseModel):
    model_config = ConfigDict(frozen=True)

    max_iterations: int = 30
    translation_tolerance: float = 1e-4
    rotation_tolerance: float = 1e-4
    max_correspondence_distance: float = 0.3
    min_match_fraction: float = 0.3

    @model_validator(mode="after")
    def _check(self):
        if self.max_correspondence_distance <= 0.0:
            raise ValueError("max_correspondence_distance must be positive")
        if not 0.0 <= self.min_match_fraction <= 1.0:
            raise ValueError("min_match_fraction must lie in [0, 1]")
        return self


@dataclass
class NdtCell:
    """Running statistics of the points in one voxel.

    ``scatter`` is the sum of outer products of deviations from the mean.
    """

    mean: np.ndarray
    scatter: np.ndarray
    count: int
    floor: float

    @property
    def sample_covariance(self) -> np.ndarray:
        if self.count < 2:
            return np.zeros((3, 3))
        return self.scatter / (self.count - 1)

    @property
    def covariance(self) -> np.ndarray:
        """Sample covariance with eigenvalues floored at ``floor``."""
        w, v = np.linalg.eigh(0.5 * (self.sample_covariance + self.sample_covariance.T))
        c = (v * np.maximum(w, self.floor)) @ v.T
        return 0.5 * (c + c.T)

    @property
    def valid(self) -> bool:
        return self.count >= MIN_CELL_POINTS


@dataclass
class NdtMap:
    cell_size: float = 0.5
    regularization: float = 0.1
    cells: dict[tuple[int, int, int], NdtCell] = field(default_factory=dict)
    total_points: int = 0
    _cache: tuple | None = field(default=None, init=False, repr=False)

    @property
    def floor(self) -> float:
        return (self.regularization * self.cell_size) ** 2

    def key(self, points: np.ndarray) -> np.ndarray:
        return np.floor(np.asarray(points, dtype=float) / self.cell_size).astype(np.int64)

    def valid_cells(self) -> dict[tuple[int, int, int], NdtCell]:
        return {k: c for k, c in self.cells.items() if c.valid}

    def lookup(self):
        """``(index, means[K,3], inverse covariances[K,3,3])`` over the valid cells."""
        if self._cache is None:
            valid = sorted(self.valid_cells().items())
            index = {k: n for n, (k, _) in enumerate(valid)}
            means = np.array([c.mean for _, c in valid]).reshape(-1, 3)
            inv = np.array([np.linalg.inv(c.covariance) for _, c in valid]).reshape(-1, 3, 3)
            self._cache = (index, means, inv)
        return self._cache


def ndt_insert(ndt_map: NdtMap, points) -> NdtMap:
    """Add world-frame points, merging per-cell statistics with the parallel update formula."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if not np.all(np.isfinite(points)):
        raise ValueError("map points must be finite")
    if len(points) == 0:
        return ndt_map
    keys, inverse = np.unique(ndt_map.key(points), axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    for n, key in enumerate(map(tuple, keys)):
        batch = points[inverse == n]
        nb = len(batch)
        mean_b = batch.mean(axis=0)
        dev = batch - mean_b
        scatter_b = dev.T @ dev
        cell = ndt_map.cells.get(key)
        if cell is None:
            ndt_map.cells[key] = NdtCell(mean_b, scatter_b, nb, ndt_map.floor)
            continue
        na = cell.count
        total = na + nb
        delta = mean_b - cell.mean
        cell.mean = cell.mean + delta * (nb / total)
        cell.scatter = cell.scatter + scatter_b + np.outer(delta, delta) * (na * nb / total)
        cell.count = total
    ndt_map.total_points += len(points)
    ndt_map._cache = None
    return ndt_map


def _associate_cells(ndt_map: NdtMap, world: np.ndarray):
    index, means, inv = ndt_map.lookup()
    cells = np.array([index.get(tuple(k), -1) for k in ndt_map.key(world)], dtype=int)
    hit = cells >= 0
    return hit, means[cells[hit]], inv[cells[hit]]


def _score_only(ndt_map: NdtMap, points: np.ndarray, pose: Pose) -> tuple[float, float]:
    world = transform_points(pose, points)
    hit, mu, inv = _associate_cells(ndt_map, world)
    if not np.any(hit):
        return 0.0, 0.0
    q = world[hit] - mu
    e = np.exp(-0.5 * np.einsum("ni,nij,nj->n", q, inv, q))
    return float(e.sum()), float(hit.mean())


def ndt_score(ndt_map: NdtMap, scan_points, pose: Pose) -> tuple[float, np.ndarray, np.ndarray]:
    """Score, gradient[6] and Hessian[6x6] of the NDT likelihood at ``pose``."""
    points = np.asarray(scan_points, dtype=float).reshape(-1, 3)
    rotated = points @ pose.rotation_matrix().T
    world = rotated + pose.position
    hit, mu, inv = _associate_cells(ndt_map, world)
    if not np.any(hit):
        raise ZeroOverlapError("no scan point falls in a valid map cell")

    y = rotated[hit]
    q = world[hit] - mu
    cq = np.einsum("nij,nj->ni", inv, q)
    e = np.exp(-0.5 * np.einsum("ni,ni->n", q, cq))

    n = len(y)
    jac = np.zeros((n, 3, 6))
    jac[:, :, :3] = np.eye(3)
    jac[:, :, 3:] = -np.array([skew(v) for v in y])
    g = np.concatenate([cq, np.cross(y, cq)], axis=1)

    second = np.zeros((n, 6, 6))
    c_dot_y = np.einsum("ni,ni->n", cq, y)
    second[:, 3:, 3:] = 0.5 * (np.einsum("ni,nj->nij", cq, y) + np.einsum("ni,nj->nij", y, cq)) - c_dot_y[:, None, None] * np.eye(3)
    jcj = np.einsum("nki,nkl,nlj->nij", jac, inv, jac)

    score = float(e.sum())
    gradient = -np.einsum("n,ni->i", e, g)
    hessian = np.einsum("n,nij->ij", e, np.einsum("ni,nj->nij", g, g) - jcj - second)
    return score, gradient, hessian


@dataclass(frozen=True, eq=False)
class AlignmentResult:
    pose: Pose
    score: float
    iterations: int
    converged: bool
    match_fraction: float


def _newton_step(gradient: np.ndarray, hessian: np.ndarray) -> np.ndarray:
    """Ascent step solving ``H d = -g`` with H shifted to negative definite."""
    if not (np.all(np.isfinite(hessian)) and np.all(np.isfinite(gradient))):
        raise SingularStepError("non-finite NDT Hessian")
    sym = 0.5 * (hessian + hessian.T)
    w = np.linalg.eigvalsh(sym)
    scale = max(float(np.max(np.abs(w))), 1e-12)
    if w[-1] > -1e-6 * scale:
        sym = sym - (w[-1] + 1e-3 * scale) * np.eye(6)
    try:
        return np.linalg.solve(sym, -gradient)
    except np.linalg.LinAlgError as exc:
        raise SingularStepError(str(exc)) from exc


def _clamp(step: np.ndarray, max_translation: float, max_rotation: float) -> np.ndarray:
    nt, nr = np.linalg.norm(step[:3]), np.linalg.norm(step[3:])
    factor = min(1.0, max_translation / nt if nt > 0 else 1.0, max_rotation / nr if nr > 0 else 1.0)
    return step * factor


def ndt_align(ndt_map: NdtMap, scan: RadarScan | np.ndarray, initial: Pose, opts: NdtOptions | None = None) -> AlignmentResult:
    """Refine ``initial`` by damped Newton ascent on the NDT score.

    Steps are clamped to a trust region and halved until the score does not
    decrease. A start with no overlap returns ``converged=False``.
    """
    opts = opts or NdtOptions()
    points = scan.positions if isinstance(scan, RadarScan) else np.asarray(scan, dtype=float).reshape(-1, 3)
    pose = initial
    converged = False
    iterations = 0
    score, _ = _score_only(ndt_map, points, pose)

    for iterations in range(1, opts.max_iterations + 1):
        try:
            score, gradient, hessian = ndt_score(ndt_map, points, pose)
        except ZeroOverlapError:
            logger.debug("NDT start has no overlap with the map")
            return AlignmentResult(pose, 0.0, iterations, False, 0.0)
        try:
            step = _newton_step(gradient, hessian)
        except SingularStepError as exc:
            logger.warning("NDT falling back to a gradient step: %s", exc)
            step = np.nan_to_num(gradient)
        step = _clamp(step, opts.max_translation_step, opts.max_rotation_step)

        alpha, accepted = 1.0, None
        for _ in range(opts.max_line_search + 1):
            candidate = pose.retract(alpha * step)
            cand_score, _ = _score_only(ndt_map, points, candidate)
            if cand_score >= score:
                accepted = (candidate, cand_score)
                break
            alpha *= 0.5
        if accepted is None:
            converged = True
            break
        taken = alpha * step
        pose, score = accepted
        if np.linalg.norm(taken[:3]) < opts.translation_tolerance and np.linalg.norm(taken[3:]) < opts.rotation_tolerance:
            converged = True
            break

    score, fraction = _score_only(ndt_map, points, pose)
    converged = converged and fraction >= opts.min_match_fraction
    logger.debug("NDT finished after %d iterations (score %.3f, overlap %.2f)", iterations, score, fraction)
    return AlignmentResult(pose, score, iterations, converged, fraction)


def rigid_transform_svd(src, dst) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares rotation and translation with ``dst ~ R @ src + t``."""
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    dst = np.asarray(dst, dtype=float).reshape(-1, 3)
    if len(src) < 3 or len(src) != len(dst):
        raise InsufficientCorrespondenceError(f"need at least 3 paired points, got {len(src)}/{len(dst)}")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    u, _, vt = np.linalg.svd((src - mu_s).T @ (dst - mu_d))
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    rotation = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return rotation, mu_d - rotation @ mu_s


def icp_align(target_points, scan: RadarScan | np.ndarray, initial: Pose, opts: IcpOptions | None = None) -> AlignmentResult:
    """Point-to-point ICP of the scan against a world-frame target cloud."""
    opts = opts or IcpOptions()
    target = np.asarray(target_points, dtype=float).reshape(-1, 3)
    points = scan.positions if isinstance(scan, RadarScan) else np.asarray(scan, dtype=float).reshape(-1, 3)
    if len(target) < 3 or len(points) < 3:
        raise InsufficientCorrespondenceError(f"ICP needs at least 3 points per cloud, got {len(points)} and {len(target)}")
    tree = cKDTree(target)
    pose = initial
    converged = False
    iterations = 0

    for iterations in range(1, opts.max_iterations + 1):
        world = transform_points(pose, points)
        dist, idx = tree.query(world, distance_upper_bound=opts.max_correspondence_distance)
        paired = np.isfinite(dist)
        if paired.sum() < 3:
            raise InsufficientCorrespondenceError(f"only {int(paired.sum())} ICP correspondences within range")
        rotation, translation = rigid_transform_svd(world[paired], target[idx[paired]])
        dq = quat_from_matrix(rotation)
        updated = Pose(rotation @ pose.position + translation, quat_normalize(dq * pose.orientation))
        moved = float(np.linalg.norm(updated.position - pose.position))
        angle = 2.0 * math.atan2(np.linalg.norm([dq.x, dq.y, dq.z]), abs(dq.w))
        pose = updated
        if moved < opts.translation_tolerance and angle < opts.rotation_tolerance:
            converged = True
            break

    dist, _ = tree.query(transform_points(pose, points), distance_upper_bound=opts.max_correspondence_distance)
    paired = np.isfinite(dist)
    fraction = float(paired.mean())
    rms = float(np.sqrt(np.mean(dist[paired] ** 2))) if paired.any() else math.inf
    return AlignmentResult(pose, -rms, iterations, converged and fraction >= opts.min_match_fraction, fraction)


def ndt_map_rows(ndt_map: NdtMap) -> np.ndarray:
    """``ix, iy, iz, count, mean[3], covariance upper triangle[6]`` per cell, sorted by index."""
    rows = []
    iu = np.triu_indices(3)
    for key, cell in sorted(ndt_map.cells.items()):
        rows.append([*key, cell.count, *cell.mean, *cell.covariance[iu]])
    return np.array(rows, dtype=float).reshape(-1, 13)
