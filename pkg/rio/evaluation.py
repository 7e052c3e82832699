"""Absolute trajectory error and ablation tables.

Errors are reported in centimetres and degrees. Estimates are compared in
the shared world frame; SE(3) alignment is available but off by default.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .core import Pose, Timestamped, quat_from_matrix, quat_normalize, rotation_angle_between
from .errors import ConfigurationError, NoOverlapError
from .registration import rigid_transform_svd

logger = logging.getLogger(__name__)

DEFAULT_MAX_GAP = 0.005
STAT_NAMES = ("mean", "median", "std", "rmse", "min", "max")


@dataclass(frozen=True, eq=False)
class SyncedPair:
    t: float
    estimate: Pose
    ground_truth: Pose
    gap: float


class SyncedPairs(list):
    """Synchronized pairs; ``dropped`` counts estimates without a partner within ``max_gap``."""

    def __init__(self, pairs=(), dropped: int = 0):
        super().__init__(pairs)
        self.dropped = dropped


def synchronize(est: list[Timestamped[Pose]], gt: list[Timestamped[Pose]], max_gap: float = DEFAULT_MAX_GAP) -> SyncedPairs:
    """Pair each estimate with the nearest ground-truth timestamp."""
    if not est or not gt:
        raise NoOverlapError("cannot synchronize an empty trajectory")
    gt_t = np.array([s.t for s in gt])
    pairs, dropped = [], 0
    for sample in est:
        k = int(np.searchsorted(gt_t, sample.t))
        candidates = [c for c in (k - 1, k) if 0 <= c < len(gt_t)]
        best = min(candidates, key=lambda c: (abs(gt_t[c] - sample.t), c))
        gap = abs(gt_t[best] - sample.t)
        if gap > max_gap:
            dropped += 1
            continue
        pairs.append(SyncedPair(sample.t, sample.value, gt[best].value, float(gap)))
    if not pairs:
        raise NoOverlapError(f"no estimate lies within {max_gap} s of a ground-truth sample")
    if dropped:
        logger.info("synchronize dropped %d of %d estimates", dropped, len(est))
    return SyncedPairs(pairs, dropped)


@dataclass(frozen=True)
class ErrorStats:
    mean: float
    median: float
    std: float
    rmse: float
    min: float
    max: float

    @classmethod
    def of(cls, errors: np.ndarray) -> ErrorStats:
        e = np.asarray(errors, dtype=float)
        return cls(
            float(np.mean(e)),
            float(np.median(e)),
            float(np.std(e)),
            float(np.sqrt(np.mean(e * e))),
            float(np.min(e)),
            float(np.max(e)),
        )

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in STAT_NAMES}


@dataclass
class AteReport:
    times: np.ndarray
    translational_cm: np.ndarray
    rotational_deg: np.ndarray
    translation: ErrorStats = field(init=False)
    rotation: ErrorStats = field(init=False)
    aligned: bool = False

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.translational_cm = np.asarray(self.translational_cm, dtype=float)
        self.rotational_deg = np.asarray(self.rotational_deg, dtype=float)
        self.translation = ErrorStats.of(self.translational_cm)
        self.rotation = ErrorStats.of(self.rotational_deg)

    def as_dict(self) -> dict:
        return {
            "frames": len(self.times),
            "aligned": self.aligned,
            "translation_cm": self.translation.as_dict(),
            "rotation_deg": self.rotation.as_dict(),
        }

    def per_frame(self) -> np.ndarray:
        """``t, translational_cm, rotational_deg`` rows."""
        return np.column_stack([self.times, self.translational_cm, self.rotational_deg])


def umeyama_alignment(src, dst) -> tuple[np.ndarray, np.ndarray]:
    """Rigid (no scale) transform minimizing ``|dst - (R src + t)|``."""
    return rigid_transform_svd(src, dst)


def _apply(rotation: np.ndarray, translation: np.ndarray, pose: Pose) -> Pose:
    q = quat_normalize(quat_from_matrix(rotation) * pose.orientation)
    return Pose(rotation @ pose.position + translation, q)


def ate(pairs: list[SyncedPair], align: bool = False) -> AteReport:
    if not pairs:
        raise ConfigurationError("ate needs at least one synchronized pair")
    estimates = [p.estimate for p in pairs]
    if align:
        src = np.array([e.position for e in estimates])
        dst = np.array([p.ground_truth.position for p in pairs])
        rotation, translation = umeyama_alignment(src, dst)
        estimates = [_apply(rotation, translation, e) for e in estimates]
    trans = [100.0 * float(np.linalg.norm(e.position - p.ground_truth.position)) for e, p in zip(estimates, pairs)]
    rot = [math.degrees(rotation_angle_between(e.orientation, p.ground_truth.orientation)) for e, p in zip(estimates, pairs)]
    return AteReport([p.t for p in pairs], trans, rot, aligned=align)


@dataclass
class AblationTable:
    rows: list[tuple[str, AteReport]]

    @property
    def columns(self) -> list[str]:
        return ["variant", "frames"] + [f"trans_{s}_cm" for s in STAT_NAMES] + [f"rot_{s}_deg" for s in STAT_NAMES]

    def records(self) -> list[list]:
        out = []
        for name, report in self.rows:
            t, r = report.translation.as_dict(), report.rotation.as_dict()
            out.append([name, len(report.times)] + [t[s] for s in STAT_NAMES] + [r[s] for s in STAT_NAMES])
        return out

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.records(), columns=self.columns)

    def to_csv(self) -> str:
        return self.frame().to_csv(index=False, float_format="%.6g", lineterminator="\n")

    def to_text(self) -> str:
        shown = ["variant", "frames"] + [f"{p}_{s}_{u}" for p, u in (("trans", "cm"), ("rot", "deg")) for s in ("mean", "median", "std", "rmse")]
        text = self.frame()[shown].to_string(index=False, float_format=lambda v: f"{v:.3f}")
        return text + "\ntranslation in cm, rotation in deg\n"


def ablation_table(reports: dict[str, AteReport]) -> AblationTable:
    if len(reports) < 2:
        raise ConfigurationError("an ablation table needs at least two variants")
    return AblationTable(sorted(reports.items(), key=lambda kv: kv[0]))
