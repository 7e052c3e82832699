"""Point association across consecutive radar scans.

Pairs are scored with ``D_ij = 1 / (1 + |o_i - o_j|^2)`` wherever the gating
policy passes and 0 elsewhere. The optimal one-to-one assignment maximizing
total similarity is solved on the cost ``1 - D`` and pairs whose score does
not exceed ``score_threshold`` are dropped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from .core import Pose, transform_points
from .errors import ConfigurationError
from .radar_sim import RadarPoint, RadarScan

logger = logging.getLogger(__name__)


class MatchStrategy(str, Enum):
    MUNKRES = "munkres"
    GREEDY = "greedy"


class PolicyParams(BaseModel):
    """Gates derived from platform kinematics: at most ~3 cm between frames at 0.6 m/s and 20 fps."""

    model_config = ConfigDict(frozen=True)

    max_value: float = 0.15**2
    max_lateral: float = 0.05**2
    min_intensity: float = 5e-4
    score_threshold: float = 0.9
    forward_axis_sign: int = -1
    forward_slack: float = 0.05

    @field_validator("forward_axis_sign")
    @classmethod
    def _sign(cls, v: int) -> int:
        if v not in (1, -1):
            raise ValueError("forward_axis_sign must be +1 or -1")
        return v

    @model_validator(mode="after")
    def _check(self):
        if self.max_value <= 0.0 or self.max_lateral <= 0.0:
            raise ValueError("max_value and max_lateral must be positive")
        if self.min_intensity < 0.0 or self.forward_slack < 0.0:
            raise ValueError("min_intensity and forward_slack must be non-negative")
        if not 0.0 < self.score_threshold <= 1.0:
            raise ValueError("score_threshold must lie in (0, 1]")
        return self


def policy(o_i: RadarPoint, o_j: RadarPoint, params: PolicyParams) -> bool:
    """Gate a candidate pair: ``o_i`` from the current scan, ``o_j`` from the previous one."""
    d = np.asarray(o_i.position, dtype=float) - np.asarray(o_j.position, dtype=float)
    return bool(_gate(d[0], d[1], d[2], o_i.intensity, params))


def _gate(dx, dy, dz, intensity, params: PolicyParams):
    # lateral covers both axes perpendicular to the sensor's forward axis
    return (
        (dx * dx + dy * dy + dz * dz <= params.max_value)
        & (params.forward_axis_sign * dx >= -params.forward_slack)
        & (dy * dy + dz * dz <= params.max_lateral)
        & (intensity >= params.min_intensity)
    )


def similarity_matrix(scan_t: RadarScan, scan_prev: RadarScan, params: PolicyParams, prev_positions=None) -> np.ndarray:
    """Scores of shape ``(len(scan_t), len(scan_prev))``.

    ``prev_positions`` overrides the previous scan's coordinates, e.g. after
    motion compensation into the current sensor frame.
    """
    cur = scan_t.positions
    prev = scan_prev.positions if prev_positions is None else np.asarray(prev_positions, dtype=float).reshape(-1, 3)
    if len(cur) == 0 or len(prev) == 0:
        return np.zeros((len(cur), len(prev)))
    diff = cur[:, None, :] - prev[None, :, :]
    dx, dy, dz = diff[..., 0], diff[..., 1], diff[..., 2]
    d2 = dx * dx + dy * dy + dz * dz
    passed = _gate(dx, dy, dz, scan_t.intensities[:, None], params)
    return np.where(passed, 1.0 / (1.0 + d2), 0.0)


def munkres(cost) -> list[tuple[int, int]]:
    """Minimum-cost assignment (Hungarian method with dual potentials).

    Rectangular inputs assign every row or every column, whichever is fewer.
    Ties go to the lowest row index first: rows are inserted in increasing
    index order and each claims the lowest-index column among equal-cost
    candidates, so the result is deterministic.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ConfigurationError(f"cost must be a 2-D matrix, got shape {cost.shape}")
    if cost.size == 0:
        return []
    if not np.all(np.isfinite(cost)):
        raise ConfigurationError("cost matrix must be finite")

    transposed = cost.shape[0] > cost.shape[1]
    a = cost.T if transposed else cost
    n, m = a.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=int)  # p[j]: 1-based row matched to column j
    way = np.zeros(m + 1, dtype=int)

    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            reduced = a[i0 - 1] - u[i0] - v[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            candidates = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(candidates)) + 1
            delta = candidates[j1 - 1]
            used_cols = np.flatnonzero(used)
            u[p[used_cols]] += delta
            v[used_cols] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    pairs = [(int(p[j]) - 1, j - 1) for j in range(1, m + 1) if p[j] != 0]
    if transposed:
        pairs = [(c, r) for r, c in pairs]
    return sorted(pairs)


def assignment_cost(cost, pairs) -> float:
    cost = np.asarray(cost, dtype=float)
    return float(sum(cost[i, j] for i, j in sorted(pairs)))


class Match(NamedTuple):
    current: int
    previous: int
    score: float


@dataclass
class MatchSet:
    pairs: list[Match] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    @property
    def current_indices(self) -> np.ndarray:
        return np.array([m.current for m in self.pairs], dtype=int)

    @property
    def previous_indices(self) -> np.ndarray:
        return np.array([m.previous for m in self.pairs], dtype=int)

    def as_dict(self) -> dict:
        return {"pairs": [[m.current, m.previous, m.score] for m in self.pairs]}


def _greedy(similarity: np.ndarray, threshold: float) -> list[Match]:
    rows, cols = np.nonzero(similarity > threshold)
    scores = similarity[rows, cols]
    # descending score, then row, then column
    order = np.lexsort((cols, rows, -scores))
    used_rows, used_cols, out = set(), set(), []
    for k in order:
        i, j = int(rows[k]), int(cols[k])
        if i in used_rows or j in used_cols:
            continue
        used_rows.add(i)
        used_cols.add(j)
        out.append(Match(i, j, float(scores[k])))
    return sorted(out)


def associate(
    scan_t: RadarScan,
    scan_prev: RadarScan,
    params: PolicyParams | None = None,
    strategy: MatchStrategy | str = MatchStrategy.MUNKRES,
    prior: Pose | None = None,
    similarity: np.ndarray | None = None,
) -> MatchSet:
    """Match points of ``scan_t`` to ``scan_prev``.

    ``prior`` is the previous sensor frame expressed in the current sensor
    frame; when given, the previous points are moved through it before gating.
    A precomputed ``similarity`` matrix may be passed to skip rebuilding it.
    """
    params = params or PolicyParams()
    strategy = MatchStrategy(strategy)
    if similarity is None:
        prev_positions = transform_points(prior, scan_prev.positions) if prior is not None else None
        similarity = similarity_matrix(scan_t, scan_prev, params, prev_positions)
    if similarity.size == 0 or not np.any(similarity > params.score_threshold):
        return MatchSet()

    if strategy is MatchStrategy.GREEDY:
        return MatchSet(_greedy(similarity, params.score_threshold))

    pairs = munkres(1.0 - similarity)
    kept = [Match(i, j, float(similarity[i, j])) for i, j in pairs if similarity[i, j] > params.score_threshold]
    logger.debug("associated %d of %d assigned pairs", len(kept), len(pairs))
    return MatchSet(kept)


def association_debug(t: float, similarity: np.ndarray, matches: MatchSet) -> dict:
    """JSON-ready record of one frame's similarity matrix and matches."""
    return {
        "t": float(t),
        "shape": list(similarity.shape),
        "similarity": np.round(similarity, 9).tolist(),
        **matches.as_dict(),
    }
