"""Declarative run configuration loaded from YAML.

Every field has a default, so an empty file is a valid configuration (it
selects the default simulated scenario). The resolved model is echoed into
each run manifest.
"""

from __future__ import annotations

import logging
from enum import Enum
from pathlib import Path

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import settings
from .association import MatchStrategy, PolicyParams
from .errors import ConfigurationError
from .fusion import UkfNoise, UtParams
from .motion_model import TrainingHyper
from .radar_sim import RadarConfig, SensorNoise
from .registration import IcpOptions, NdtOptions
from .trajectory import TrajectoryKind, TrajectoryParams

logger = logging.getLogger(__name__)

DATASET_FILES = ("scans.jsonl", "imu.csv", "groundtruth.csv")


class MotionModelKind(str, Enum):
    RNN = "rnn"
    CONSTANT_VELOCITY = "constant_velocity"


class MatcherKind(str, Enum):
    NDT = "ndt"
    ICP = "icp"


class Variant(str, Enum):
    FULL = "full"
    ICP = "icp"
    CV = "cv"
    RADAR_REMOVED = "radar_removed"


class ScenarioConfig(BaseModel):
    """Simulated environment, platform motion and sensor imperfections."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    trajectory: TrajectoryParams = TrajectoryParams(rate=100.0)
    imu_rate: float = 400.0
    gyro_bias: tuple[float, float, float] = (0.004, -0.003, 0.005)
    gyro_noise: float = 0.002
    accel_bias: tuple[float, float, float] = (0.03, -0.02, 0.0)
    accel_noise: float = 0.02
    landmark_density: float = 1.0
    margin: float = 6.0
    clearance: float = 0.3
    ghost_rate: float = 0.1
    dropout_rate: float = 0.05
    noise: SensorNoise = SensorNoise()
    seed: int = 0

    @model_validator(mode="after")
    def _check(self):
        if self.imu_rate <= 0.0 or self.landmark_density <= 0.0:
            raise ValueError("imu_rate and landmark_density must be positive")
        if min(self.gyro_noise, self.accel_noise, self.margin, self.clearance) < 0.0:
            raise ValueError("noise, margin and clearance must be non-negative")
        if not (0.0 <= self.ghost_rate <= 1.0 and 0.0 <= self.dropout_rate <= 1.0):
            raise ValueError("ghost_rate and dropout_rate must lie in [0, 1]")
        return self

    @classmethod
    def preset(cls, kind: TrajectoryKind | str, **overrides) -> ScenarioConfig:
        trajectory = TrajectoryParams(kind=TrajectoryKind(kind), rate=100.0)
        return cls(trajectory=trajectory, **overrides)


class TrainingConfig(BaseModel):
    """Simulated trajectories used to fit the LSTM when no parameter file is given."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kinds: list[TrajectoryKind] = [TrajectoryKind.MIXED, TrajectoryKind.INFINITY_LOOP, TrajectoryKind.SHARP_TURNS, TrajectoryKind.ARC]
    repeats: int = 2
    validation_kinds: list[TrajectoryKind] = [TrajectoryKind.SHARP_TURNS]
    seed_offset: int = 1000
    hyper: TrainingHyper = TrainingHyper()

    @field_validator("repeats")
    @classmethod
    def _repeats(cls, v: int) -> int:
        if v < 1:
            raise ValueError("repeats must be at least 1")
        return v


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    dataset: Path | None = None
    scenario: ScenarioConfig | None = None
    radar: RadarConfig = RadarConfig()
    policy: PolicyParams = PolicyParams()
    association: MatchStrategy = MatchStrategy.MUNKRES
    motion_compensation: bool = True
    ndt: NdtOptions = NdtOptions()
    icp: IcpOptions = IcpOptions()
    motion_model: MotionModelKind = MotionModelKind.RNN
    model_params: Path | None = None
    matcher: MatcherKind = MatcherKind.NDT
    ut: UtParams = UtParams()
    noise: UkfNoise = UkfNoise()
    training: TrainingConfig = TrainingConfig()
    radar_enabled: bool = True
    bootstrap_frames: int = Field(default=5, ge=1)
    max_sync_gap: float = 0.005
    align_ate: bool = False
    dump_debug: bool = False
    seed: int = Field(default_factory=lambda: settings.DEFAULT_SEED)
    output_dir: Path = Field(default_factory=lambda: Path(settings.OUTPUT_DIR))

    @model_validator(mode="before")
    @classmethod
    def _default_source(cls, data):
        if isinstance(data, dict) and data.get("dataset") is None and data.get("scenario") is None:
            data = {**data, "scenario": {}}
        return data

    @model_validator(mode="after")
    def _sources(self):
        if self.dataset is not None and self.scenario is not None:
            raise ValueError("set exactly one of 'dataset' and 'scenario'")
        if self.dataset is not None:
            missing = [name for name in DATASET_FILES if not (self.dataset / name).is_file()]
            if missing:
                raise ValueError(f"dataset {self.dataset} is missing {', '.join(missing)}")
        if self.model_params is not None and not self.model_params.is_file():
            raise ValueError(f"model_params {self.model_params} does not exist")
        if self.max_sync_gap <= 0.0:
            raise ValueError("max_sync_gap must be positive")
        return self

    def for_variant(self, variant: Variant | str) -> RunConfig:
        """The ablation variants differ from the full configuration in one component each."""
        variant = Variant(variant)
        update = {
            Variant.FULL: {},
            Variant.ICP: {"matcher": MatcherKind.ICP},
            Variant.CV: {"motion_model": MotionModelKind.CONSTANT_VELOCITY},
            Variant.RADAR_REMOVED: {"radar_enabled": False},
        }[variant]
        return self.model_copy(update=update)

    def snapshot(self) -> dict:
        return self.model_dump(mode="json")


def load_config(path: str | Path | None = None, **overrides) -> RunConfig:
    """Read a YAML run configuration; ``overrides`` replace top-level keys."""
    data: dict = {}
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text())
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"invalid YAML in {path}: {exc}") from exc
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigurationError(f"config {path} must be a mapping")
        data = loaded or {}
        base = Path(path).resolve().parent
        for key in ("dataset", "model_params"):
            if isinstance(data.get(key), str) and not Path(data[key]).is_absolute():
                data[key] = str(base / data[key])
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(str(exc)) from exc
