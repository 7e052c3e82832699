"""Simulated datasets and every on-disk format the tool reads or writes.

Dataset directory layout::

    scans.jsonl       one radar frame per line: {"t", "points": [[x, y, z, I, vr]], "ids"}
    imu.csv           t,wx,wy,wz,ax,ay,az
    groundtruth.csv   t,px,py,pz,qw,qx,qy,qz

Floats are written with 9 significant digits.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from tqdm import tqdm

from .core import Pose, Timestamped
from .errors import ConfigurationError, DataError
from .motion_model import TrainingSet, make_training_windows
from .radar_sim import (
    Environment,
    ImuSample,
    RadarConfig,
    RadarScan,
    imu_arrays,
    imu_from_arrays,
    make_environment,
    simulate_imu,
    simulate_scan,
)
from .trajectory import (
    TrajectoryKind,
    TrajectoryParams,
    generate_trajectory,
    trajectory_arrays,
    trajectory_from_arrays,
    trajectory_velocities,
)

logger = logging.getLogger(__name__)

SCANS_FILE = "scans.jsonl"
IMU_FILE = "imu.csv"
GROUNDTRUTH_FILE = "groundtruth.csv"
MANIFEST_FILE = "manifest.json"

IMU_HEADER = "t,wx,wy,wz,ax,ay,az"
POSE_HEADER = "t,px,py,pz,qw,qx,qy,qz"
STATE_HEADER = "t,px,py,pz,qw,qx,qy,qz,vx,vy,vz,bx,by,bz,cov_trace,converged,match_fraction"
MAP_HEADER = "ix,iy,iz,count,mx,my,mz,c00,c01,c02,c11,c12,c22"
ERROR_HEADER = "t,trans_cm,rot_deg"
FMT = "%.9g"


@dataclass
class Dataset:
    scans: list[RadarScan]
    imu: list[ImuSample]
    ground_truth: list[Timestamped[Pose]]
    environment: Environment | None = None

    @property
    def frame_times(self) -> np.ndarray:
        return np.array([s.t for s in self.scans])


def simulate_dataset(scenario, radar: RadarConfig, seed: int | None = None, progress: bool = False) -> Dataset:
    """Generate ground truth, landmarks, IMU and radar frames for a scenario.

    Seeds are derived as ``(seed, stream)`` so every stream is independent;
    radar frame ``k`` uses ``(seed, 3, k)``.
    """
    seed = scenario.seed if seed is None else seed
    params = scenario.trajectory
    ratio = params.rate / radar.frame_rate
    if abs(ratio - round(ratio)) > 1e-9 or ratio < 1:
        raise ConfigurationError(f"ground-truth rate {params.rate} Hz must be a multiple of the frame rate {radar.frame_rate} fps")
    ratio = int(round(ratio))

    gt = generate_trajectory(params.kind, params)
    t, positions, _ = trajectory_arrays(gt)
    velocities = trajectory_velocities(gt)
    env = make_environment(
        positions.min(axis=0),
        positions.max(axis=0),
        density=scenario.landmark_density,
        margin=scenario.margin,
        seed=[seed, 1],
        ghost_rate=scenario.ghost_rate,
        dropout_rate=scenario.dropout_rate,
        noise=scenario.noise,
        path=positions,
        clearance=scenario.clearance,
    )
    imu = simulate_imu(
        gt,
        scenario.imu_rate,
        gyro_bias=scenario.gyro_bias,
        noise_sigma=(scenario.gyro_noise,) * 3,
        rng_seed=[seed, 2],
        accel_bias=scenario.accel_bias,
        accel_noise_sigma=(scenario.accel_noise,) * 3,
    )
    frame_idx = list(range(0, len(gt), ratio))
    scans = []
    for k, i in enumerate(tqdm(frame_idx, desc="simulate", disable=not progress)):
        scans.append(simulate_scan(env, gt[i].value, velocities[i], radar, [seed, 3, k], t=float(t[i])))
    logger.info("simulated %d frames, %d IMU samples, %d landmarks", len(scans), len(imu), len(env.landmarks))
    return Dataset(scans, imu, gt, env)


# ----- dataset files -----

def _g(v: float) -> float:
    return float(f"{v:.9g}")


def write_dataset(dataset: Dataset, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / SCANS_FILE, "w") as fh:
        for scan in dataset.scans:
            rows = np.column_stack([scan.positions, scan.intensities, scan.radial_velocities])
            record = {
                "t": _g(scan.t),
                "points": [[_g(v) for v in row] for row in rows],
                "ids": [int(i) for i in scan.landmark_ids],
            }
            fh.write(json.dumps(record) + "\n")
    t, data = imu_arrays(dataset.imu)
    _savetxt(out / IMU_FILE, np.column_stack([t, data]), IMU_HEADER)
    write_trajectory(dataset.ground_truth, out / GROUNDTRUTH_FILE)
    return [out / SCANS_FILE, out / IMU_FILE, out / GROUNDTRUTH_FILE]


def _savetxt(path: Path, rows: np.ndarray, header: str) -> None:
    ncols = len(header.split(","))
    np.savetxt(path, np.asarray(rows, dtype=float).reshape(-1, ncols), fmt=FMT, delimiter=",", header=header, comments="")


def _loadtxt(path: Path, header: str) -> np.ndarray:
    if not path.is_file():
        raise DataError(f"missing file {path}")
    with open(path) as fh:
        first = fh.readline().strip()
    if first != header:
        raise DataError(f"{path} has header {first!r}, expected {header!r}")
    try:
        return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2).reshape(-1, len(header.split(",")))
    except ValueError as exc:
        raise DataError(f"cannot parse {path}: {exc}") from exc


def read_scans(path: str | Path) -> list[RadarScan]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file {path}")
    scans = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                rows = np.asarray(record["points"], dtype=float).reshape(-1, 5)
                ids = record.get("ids")
                scans.append(RadarScan(float(record["t"]), rows[:, :3], rows[:, 3], rows[:, 4], ids))
            except (KeyError, ValueError, TypeError) as exc:
                raise DataError(f"{path}:{n}: malformed scan record ({exc})") from exc
    return scans


def read_imu(path: str | Path) -> list[ImuSample]:
    rows = _loadtxt(Path(path), IMU_HEADER)
    return imu_from_arrays(rows[:, 0], rows[:, 1:])


def write_trajectory(traj: list[Timestamped[Pose]], path: str | Path) -> Path:
    t, pos, quat = trajectory_arrays(traj)
    _savetxt(Path(path), np.column_stack([t, pos, quat]), POSE_HEADER)
    return Path(path)


def read_trajectory(path: str | Path) -> list[Timestamped[Pose]]:
    rows = _loadtxt(Path(path), POSE_HEADER)
    return trajectory_from_arrays(rows[:, 0], rows[:, 1:4], rows[:, 4:8])


def read_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    if not path.is_dir():
        raise DataError(f"dataset directory {path} does not exist")
    scans = read_scans(path / SCANS_FILE)
    imu = read_imu(path / IMU_FILE)
    gt = read_trajectory(path / GROUNDTRUTH_FILE)
    if not scans or len(imu) < 2 or len(gt) < 2:
        raise DataError(f"dataset {path} has too few scans, IMU samples or poses")
    return Dataset(scans, imu, gt)


# ----- run outputs -----

def write_state_log(rows: list[list[float]], path: str | Path) -> Path:
    _savetxt(Path(path), np.asarray(rows, dtype=float), STATE_HEADER)
    return Path(path)


def read_state_log(path: str | Path) -> np.ndarray:
    return _loadtxt(Path(path), STATE_HEADER)


def write_map(rows: np.ndarray, path: str | Path) -> Path:
    _savetxt(Path(path), rows, MAP_HEADER)
    return Path(path)


def read_map(path: str | Path) -> np.ndarray:
    return _loadtxt(Path(path), MAP_HEADER)


def write_errors(rows: np.ndarray, path: str | Path) -> Path:
    _savetxt(Path(path), rows, ERROR_HEADER)
    return Path(path)


def read_errors(path: str | Path) -> np.ndarray:
    return _loadtxt(Path(path), ERROR_HEADER)


def write_json(doc: dict, path: str | Path) -> Path:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return Path(path)


def sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir: str | Path, command: str, config: dict, seeds: dict, started: float) -> Path:
    """Write ``manifest.json`` atomically, inventorying every other file in the directory."""
    from . import __version__

    out = Path(out_dir)
    inventory = {
        str(p.relative_to(out)): {"sha256": sha256(p), "bytes": p.stat().st_size}
        for p in sorted(out.rglob("*"))
        if p.is_file() and p.name != MANIFEST_FILE
    }
    doc = {
        "command": command,
        "version": __version__,
        "config": config,
        "seeds": seeds,
        "files": inventory,
        "wall_clock_s": round(time.time() - started, 3),
    }
    fd, tmp = tempfile.mkstemp(dir=out, prefix=".manifest-", suffix=".json")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, out / MANIFEST_FILE)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return out / MANIFEST_FILE


# ----- LSTM training data -----

def _training_params(kind: TrajectoryKind, rng: np.random.Generator) -> TrajectoryParams:
    speed_min = float(rng.uniform(0.35, 0.45))
    speed_max = float(rng.uniform(0.55, 0.65))
    return TrajectoryParams(
        kind=kind,
        rate=100.0,
        length=float(rng.uniform(10.0, 14.0)),
        speed=float(rng.uniform(speed_min, speed_max)),
        speed_min=speed_min,
        speed_max=speed_max,
        speed_period=float(rng.uniform(5.0, 10.0)),
        radius=float(rng.uniform(1.5, 3.0)),
        arc_angle=float(rng.choice([-1.0, 1.0]) * rng.uniform(np.pi / 3, np.pi)),
        lobe=float(rng.uniform(1.5, 2.5)),
        turn_rate=float(rng.uniform(0.35, 0.45)),
    )


def build_training_set(training, scenario, radar: RadarConfig, base_seed: int, progress: bool = False) -> TrainingSet:
    """Windows from freshly simulated trajectories, disjoint from the evaluation run.

    Each (kind, repeat) draws its own trajectory shape; the first repeat of
    every kind in ``training.validation_kinds`` is held out for validation.
    """
    window = training.hyper.window
    inputs, targets, ids, validation = [], [], [], set()
    jobs = [(kind, r) for r in range(training.repeats) for kind in training.kinds]
    for traj_id, (kind, r) in enumerate(tqdm(jobs, desc="training data", disable=not progress)):
        rng = np.random.default_rng([base_seed + training.seed_offset, traj_id])
        gt = generate_trajectory(kind, _training_params(kind, rng))
        imu = simulate_imu(
            gt,
            scenario.imu_rate,
            gyro_bias=scenario.gyro_bias,
            noise_sigma=(scenario.gyro_noise,) * 3,
            rng_seed=[base_seed + training.seed_offset, traj_id, 2],
            accel_bias=scenario.accel_bias,
            accel_noise_sigma=(scenario.accel_noise,) * 3,
        )
        x, y = _windows_at_frames(imu, gt, radar.frame_rate, window)
        inputs.append(x)
        targets.append(y)
        ids.append(np.full(len(x), traj_id))
        if r == 0 and kind in training.validation_kinds:
            validation.add(traj_id)
    if len(validation) == len(jobs):
        validation = set()
    return TrainingSet(np.concatenate(inputs), np.concatenate(targets), np.concatenate(ids), frozenset(validation))


def _windows_at_frames(imu: list[ImuSample], gt: list[Timestamped[Pose]], frame_rate: float, window: int):
    imu_t, imu_data = imu_arrays(imu)
    t, pos, quat = trajectory_arrays(gt)
    vel = trajectory_velocities(gt)
    frame_t = np.arange(t[0], t[-1] + 1e-9, 1.0 / frame_rate)
    idx = np.clip(np.searchsorted(t, frame_t - 1e-9), 0, len(t) - 1)
    return make_training_windows(imu_t, imu_data, t[idx], pos[idx], quat[idx], window, vel[idx])


def training_set_from_dirs(dirs, window: int, validation_dirs=()) -> TrainingSet:
    """Training windows from dataset directories written by ``simulate``."""
    all_dirs = [Path(d) for d in dirs] + [Path(d) for d in validation_dirs]
    if not all_dirs:
        raise DataError("no training datasets given")
    inputs, targets, ids = [], [], []
    for traj_id, path in enumerate(all_dirs):
        ds = read_dataset(path)
        imu_t, imu_data = imu_arrays(ds.imu)
        t, pos, quat = trajectory_arrays(ds.ground_truth)
        vel = trajectory_velocities(ds.ground_truth)
        frame_t = ds.frame_times
        idx = np.clip(np.searchsorted(t, frame_t - 1e-9), 0, len(t) - 1)
        x, y = make_training_windows(imu_t, imu_data, t[idx], pos[idx], quat[idx], window, vel[idx])
        inputs.append(x)
        targets.append(y)
        ids.append(np.full(len(x), traj_id))
    validation = frozenset(range(len(dirs), len(all_dirs)))
    return TrainingSet(np.concatenate(inputs), np.concatenate(targets), np.concatenate(ids), validation)
