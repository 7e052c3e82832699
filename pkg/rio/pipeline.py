"""Per-frame odometry pipeline.

Each radar frame runs through a small langgraph graph::

    predict -> associate -> register -> correct -> update_map
                   |            |                      ^
                   +------------+----- coast ----------+

A frame coasts on the prediction when association yields too few matches or
registration does not converge. The first ``bootstrap_frames`` frames only
build the map.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from langgraph.graph import END, START, StateGraph
from scipy.spatial import cKDTree
from tqdm import tqdm
from typing_extensions import TypedDict

from .association import MatchSet, associate, association_debug, similarity_matrix
from .config import MatcherKind, MotionModelKind, RunConfig, ScenarioConfig, Variant
from .core import Pose, Timestamped, pose_compose, pose_inverse, transform_points
from .dataset import Dataset, build_training_set, write_map, write_state_log, write_trajectory
from .errors import DataError, InsufficientCorrespondenceError
from .fusion import PoseMeasurement, UkfState, covariance_trace, dead_reckon, ukf_correct, ukf_predict
from .motion_model import ConstantVelocityModel, LstmMotionModel, MotionModel, load_params, train
from .radar_sim import RadarScan, imu_arrays
from .registration import AlignmentResult, NdtMap, icp_align, ndt_align, ndt_insert, ndt_map_rows
from .trajectory import trajectory_velocities

logger = logging.getLogger(__name__)

MIN_MATCHES = 3
CONFIRM_RADIUS = 0.1

TRAJECTORY_FILE = "trajectory.csv"
STATES_FILE = "states.csv"
MAP_FILE = "map.csv"
DEBUG_FILE = "debug.jsonl"


class FrameState(TypedDict, total=False):
    index: int
    scan: RadarScan
    dt: float
    imu_window: np.ndarray
    state: UkfState
    predicted: UkfState
    similarity: np.ndarray
    matches: MatchSet
    alignment: AlignmentResult | None
    status: str


@dataclass
class RunResult:
    trajectory: list[Timestamped[Pose]]
    state_rows: list[list[float]]
    ndt_map: NdtMap
    model_name: str
    statuses: list[str] = field(default_factory=list)
    debug: list[dict] = field(default_factory=list)

    @property
    def corrected_frames(self) -> int:
        return self.statuses.count("corrected")

    @property
    def coasted_frames(self) -> int:
        return self.statuses.count("coast")


def build_motion_model(config: RunConfig, progress: bool = False) -> MotionModel:
    """Constant velocity, a saved LSTM, or an LSTM trained on fresh simulated trajectories."""
    if config.motion_model is MotionModelKind.CONSTANT_VELOCITY:
        return ConstantVelocityModel()
    if config.model_params is not None:
        logger.info("loading LSTM parameters from %s", config.model_params)
        return LstmMotionModel(load_params(config.model_params))
    scenario = config.scenario or ScenarioConfig()
    dataset = build_training_set(config.training, scenario, config.radar, config.seed, progress=progress)
    logger.info("training LSTM on %d windows", len(dataset.inputs))
    return LstmMotionModel(train(dataset, config.training.hyper, progress=progress))


class OdometryRunner:
    """Owns the filter state and the accumulated map for one run."""

    def __init__(self, config: RunConfig, model: MotionModel):
        self.config = config
        self.model = model
        self.ndt_map = NdtMap(config.ndt.cell_size, config.ndt.regularization)
        self.map_points: list[np.ndarray] = []
        self.state: UkfState | None = None
        self.prev_scan: RadarScan | None = None
        self.prev_pose: Pose | None = None
        self.pending = np.zeros((0, 3))
        self.debug: list[dict] = []
        self.graph = self._build_graph()

    def _build_graph(self):
        builder = StateGraph(FrameState)
        builder.add_node("predict", self.predict)
        builder.add_node("associate", self.associate)
        builder.add_node("register", self.register)
        builder.add_node("correct", self.correct)
        builder.add_node("update_map", self.update_map)

        builder.add_edge(START, "predict")
        builder.add_edge("predict", "associate")
        builder.add_conditional_edges("associate", self._after_associate, {"register": "register", "coast": "update_map"})
        builder.add_conditional_edges("register", self._after_register, {"correct": "correct", "coast": "update_map"})
        builder.add_edge("correct", "update_map")
        builder.add_edge("update_map", END)
        return builder.compile()

    # ----- nodes -----

    def predict(self, frame: FrameState) -> dict:
        if frame["index"] == 0:
            return {"predicted": self.state, "state": self.state}
        predicted = ukf_predict(self.state, frame["imu_window"], self.model, frame["dt"], self.config.ut, self.config.noise)
        return {"predicted": predicted, "state": predicted}

    def associate(self, frame: FrameState) -> dict:
        scan = frame["scan"]
        if self.prev_scan is None:
            return {"matches": MatchSet(), "similarity": np.zeros((len(scan), 0))}
        prev_positions = None
        if self.config.motion_compensation:
            prior = pose_compose(pose_inverse(frame["predicted"].pose), self.prev_pose)
            prev_positions = transform_points(prior, self.prev_scan.positions)
        similarity = similarity_matrix(scan, self.prev_scan, self.config.policy, prev_positions)
        matches = associate(scan, self.prev_scan, self.config.policy, self.config.association, similarity=similarity)
        return {"matches": matches, "similarity": similarity}

    def _after_associate(self, frame: FrameState) -> str:
        if frame["index"] < self.config.bootstrap_frames:
            return "coast"
        if len(frame["matches"]) < MIN_MATCHES:
            logger.warning("frame %d: %d matches, coasting on prediction", frame["index"], len(frame["matches"]))
            return "coast"
        return "register"

    def register(self, frame: FrameState) -> dict:
        points = frame["scan"].positions[frame["matches"].current_indices]
        initial = frame["predicted"].pose
        if self.config.matcher is MatcherKind.ICP:
            if not self.map_points:
                return {"alignment": None}
            try:
                alignment = icp_align(np.vstack(self.map_points), points, initial, self.config.icp)
            except InsufficientCorrespondenceError as exc:
                logger.warning("frame %d: ICP failed: %s", frame["index"], exc)
                return {"alignment": None}
        else:
            alignment = ndt_align(self.ndt_map, points, initial, self.config.ndt)
        return {"alignment": alignment}

    def _after_register(self, frame: FrameState) -> str:
        alignment = frame.get("alignment")
        if alignment is None or not alignment.converged:
            if alignment is not None:
                logger.warning(
                    "frame %d: registration did not converge (overlap %.2f), coasting",
                    frame["index"],
                    alignment.match_fraction,
                )
            return "coast"
        return "correct"

    def correct(self, frame: FrameState) -> dict:
        z = PoseMeasurement(frame["alignment"].pose, self.config.noise.measurement())
        return {"state": ukf_correct(frame["predicted"], z, self.config.ut)}

    def update_map(self, frame: FrameState) -> dict:
        scan = frame["scan"]
        index = frame["index"]
        state = frame["state"]
        alignment = frame.get("alignment")

        if index < self.config.bootstrap_frames:
            self._insert(transform_points(state.pose, scan.positions))
            return {"status": "bootstrap"}

        matched = np.zeros(len(scan), dtype=bool)
        matched[frame["matches"].current_indices] = True
        if alignment is None or not alignment.converged:
            self.pending = transform_points(state.pose, scan.positions[~matched])
            return {"status": "coast"}

        world = transform_points(alignment.pose, scan.positions)
        unmatched = world[~matched]
        confirmed = np.zeros(len(unmatched), dtype=bool)
        if len(unmatched) and len(self.pending):
            dist, _ = cKDTree(self.pending).query(unmatched, distance_upper_bound=CONFIRM_RADIUS)
            confirmed = np.isfinite(dist)
        self._insert(np.vstack([world[matched], unmatched[confirmed]]))
        self.pending = unmatched[~confirmed]
        return {"status": "corrected" if state.corrected else "coast"}

    def _insert(self, points: np.ndarray) -> None:
        if len(points) == 0:
            return
        ndt_insert(self.ndt_map, points)
        self.map_points.append(points)

    # ----- driver -----

    def run(self, dataset: Dataset, progress: bool = False) -> RunResult:
        if not dataset.scans:
            raise DataError("dataset has no radar frames")
        imu_t, imu_data = imu_arrays(dataset.imu)
        initial_pose, initial_velocity = initial_conditions(dataset)
        self.state = UkfState.initial(initial_pose, initial_velocity)

        trajectory, rows, statuses = [], [], []
        prev_t = dataset.scans[0].t
        for index, scan in enumerate(tqdm(dataset.scans, desc=self.model.name, disable=not progress)):
            frame: FrameState = {
                "index": index,
                "scan": scan,
                "dt": scan.t - prev_t,
                "imu_window": _interval_rows(imu_t, imu_data, prev_t, scan.t),
                "alignment": None,
            }
            out = self.graph.invoke(frame)
            self.state = out["state"]
            self.prev_scan = scan
            self.prev_pose = self.state.pose
            prev_t = scan.t

            alignment = out.get("alignment")
            status = out["status"]
            trajectory.append(Timestamped(scan.t, self.state.pose))
            rows.append(state_row(scan.t, self.state, status == "corrected", alignment.match_fraction if alignment else 0.0))
            statuses.append(status)
            if self.config.dump_debug:
                record = association_debug(scan.t, out["similarity"], out["matches"])
                record.update(frame=index, status=status)
                if alignment is not None:
                    record.update(score=alignment.score, iterations=alignment.iterations, match_fraction=alignment.match_fraction)
                self.debug.append(record)

        logger.info(
            "%s run: %d frames, %d corrected, %d coasted, %d map cells",
            self.model.name,
            len(statuses),
            statuses.count("corrected"),
            statuses.count("coast"),
            len(self.ndt_map.cells),
        )
        return RunResult(trajectory, rows, self.ndt_map, self.model.name, statuses, self.debug)


def _interval_rows(imu_t: np.ndarray, imu_data: np.ndarray, t0: float, t1: float) -> np.ndarray:
    lo = np.searchsorted(imu_t, t0, side="right")
    hi = np.searchsorted(imu_t, t1 + 1e-9, side="right")
    if hi > lo:
        return imu_data[lo:hi]
    return imu_data[max(hi - 1, 0) : max(hi, 1)]


def initial_conditions(dataset: Dataset) -> tuple[Pose, np.ndarray]:
    """Ground-truth pose and velocity nearest the first radar frame."""
    gt_t = np.array([s.t for s in dataset.ground_truth])
    k = int(np.argmin(np.abs(gt_t - dataset.scans[0].t)))
    return dataset.ground_truth[k].value, trajectory_velocities(dataset.ground_truth)[k]


def state_row(t: float, state: UkfState, converged: bool, match_fraction: float) -> list[float]:
    return [t, *state.p, *state.q.as_array(), *state.v, *state.b, covariance_trace(state), float(converged), match_fraction]


def run_dead_reckoning(dataset: Dataset) -> RunResult:
    """IMU-only trajectory sampled at the radar frame times."""
    initial_pose, initial_velocity = initial_conditions(dataset)
    t0 = dataset.scans[0].t
    imu = [s for s in dataset.imu if s.t >= t0 - 1e-9]
    integrated = dead_reckon(imu, initial_pose, initial_velocity)
    times = np.array([s.t for s in integrated])
    trajectory, rows = [], []
    for scan in dataset.scans:
        k = int(np.clip(np.searchsorted(times, scan.t - 1e-9), 0, len(times) - 1))
        pose = integrated[k].value
        trajectory.append(Timestamped(scan.t, pose))
        rows.append([scan.t, *pose.position, *pose.orientation.as_array(), *[np.nan] * 7, 0.0, 0.0])
    logger.info("dead reckoning: %d frames from %d IMU samples", len(trajectory), len(imu))
    return RunResult(trajectory, rows, NdtMap(), "dead_reckoning", ["coast"] * len(trajectory))


def run_odometry(dataset: Dataset, config: RunConfig, model: MotionModel | None = None, progress: bool = False) -> RunResult:
    if not config.radar_enabled:
        return run_dead_reckoning(dataset)
    model = model or build_motion_model(config, progress=progress)
    return OdometryRunner(config, model).run(dataset, progress=progress)


def run_variants(dataset: Dataset, config: RunConfig, variants, progress: bool = False) -> dict[str, RunResult]:
    """Run each variant on the same dataset; the LSTM is trained once and shared."""
    results: dict[str, RunResult] = {}
    lstm: MotionModel | None = None
    for variant in variants:
        variant = Variant(variant)
        cfg = config.for_variant(variant)
        model = None
        if cfg.radar_enabled and cfg.motion_model is MotionModelKind.RNN:
            lstm = lstm or build_motion_model(cfg, progress=progress)
            model = lstm
        logger.info("running variant %s", variant.value)
        results[variant.value] = run_odometry(dataset, cfg, model=model, progress=progress)
    return results


def write_run_outputs(result: RunResult, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [
        write_trajectory(result.trajectory, out / TRAJECTORY_FILE),
        write_state_log(result.state_rows, out / STATES_FILE),
        write_map(ndt_map_rows(result.ndt_map), out / MAP_FILE),
    ]
    if result.debug:
        with open(out / DEBUG_FILE, "w") as fh:
            for record in result.debug:
                fh.write(json.dumps(record) + "\n")
        paths.append(out / DEBUG_FILE)
    return paths
