"""Transition functions for the position term of the filter's prediction.

Two models share the ``MotionModel`` interface: a constant-velocity baseline
and a bi-directional LSTM written directly in numpy (forward pass, BPTT and
an Adam training loop). The LSTM reads one inter-frame IMU window and
predicts what constant velocity misses over that window: the residual
``R^T (p_k - p_{k-1} - v_{k-1} dt)`` in the body frame of the previous pose.
``bind`` adds ``v * dt`` and the residual rotated into the world frame per
sigma point.
"""

from __future__ import annotations

import json
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Callable

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from tqdm import tqdm

from .core import quat_array_to_matrix
from .errors import ConfigurationError, DataError, TrainingFailureError
from .radar_sim import ImuSample

if TYPE_CHECKING:
    from .fusion import UkfState

logger = logging.getLogger(__name__)

INPUT_DIM = 6
OUTPUT_DIM = 3
PARAMS_FORMAT = "rio-bilstm"
PARAMS_VERSION = 2

WEIGHT_NAMES = ("Wx_fwd", "Wh_fwd", "b_fwd", "Wx_bwd", "Wh_bwd", "b_bwd", "V", "c")


@dataclass
class MotionModelInput:
    imu_window: list[ImuSample]
    prev_state: UkfState
    dt: float

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")


def cv_predict(inp: MotionModelInput) -> np.ndarray:
    """Constant-velocity displacement ``v * dt``."""
    return np.asarray(inp.prev_state.v, dtype=float) * inp.dt


# ----- normalization -----

@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, data: np.ndarray) -> Normalizer:
        data = np.asarray(data, dtype=float)
        flat = data.reshape(-1, data.shape[-1])
        std = flat.std(axis=0)
        return cls(flat.mean(axis=0), np.where(std > 1e-9, std, 1.0))

    @classmethod
    def identity(cls, dim: int) -> Normalizer:
        return cls(np.zeros(dim), np.ones(dim))

    def normalize(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def denormalize(self, x):
        return np.asarray(x, dtype=float) * self.std + self.mean

    def as_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> Normalizer:
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))


# ----- parameters -----

@dataclass
class LstmParams:
    """Weights of both directions (gate order: input, forget, output, cell) and the output projection."""

    weights: dict[str, np.ndarray]
    dropout_rate: float = 0.25
    window: int = 20
    input_norm: Normalizer = field(default_factory=lambda: Normalizer.identity(INPUT_DIM))
    target_norm: Normalizer = field(default_factory=lambda: Normalizer.identity(OUTPUT_DIM))
    history: dict[str, list[float]] = field(default_factory=lambda: {"train": [], "validation": []})

    def __post_init__(self):
        missing = set(WEIGHT_NAMES) - set(self.weights)
        if missing:
            raise ConfigurationError(f"missing LSTM weights: {sorted(missing)}")
        h = self.hidden
        expected = {
            "Wx_fwd": (4 * h, INPUT_DIM), "Wh_fwd": (4 * h, h), "b_fwd": (4 * h,),
            "Wx_bwd": (4 * h, INPUT_DIM), "Wh_bwd": (4 * h, h), "b_bwd": (4 * h,),
            "V": (OUTPUT_DIM, 2 * h), "c": (OUTPUT_DIM,),
        }
        for name, shape in expected.items():
            w = np.asarray(self.weights[name], dtype=float)
            if w.shape != shape:
                raise ConfigurationError(f"weight {name} has shape {w.shape}, expected {shape}")
            if not np.all(np.isfinite(w)):
                raise ConfigurationError(f"weight {name} is not finite")
            self.weights[name] = w
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError("dropout_rate must lie in [0, 1)")

    @property
    def hidden(self) -> int:
        return int(np.asarray(self.weights["Wh_fwd"]).shape[1])

    def copy(self) -> LstmParams:
        return LstmParams(
            {k: v.copy() for k, v in self.weights.items()},
            self.dropout_rate,
            self.window,
            Normalizer(self.input_norm.mean.copy(), self.input_norm.std.copy()),
            Normalizer(self.target_norm.mean.copy(), self.target_norm.std.copy()),
            {k: list(v) for k, v in self.history.items()},
        )


def init_params(hidden: int, rng: np.random.Generator, dropout_rate: float = 0.25, window: int = 20) -> LstmParams:
    """Uniform init in ``+-1/sqrt(H)`` with the forget-gate bias at +1."""
    if hidden < 1:
        raise ConfigurationError("hidden size must be at least 1")
    bound = 1.0 / math.sqrt(hidden)
    weights = {}
    for direction in ("fwd", "bwd"):
        weights[f"Wx_{direction}"] = rng.uniform(-bound, bound, (4 * hidden, INPUT_DIM))
        weights[f"Wh_{direction}"] = rng.uniform(-bound, bound, (4 * hidden, hidden))
        bias = rng.uniform(-bound, bound, 4 * hidden)
        bias[hidden : 2 * hidden] = 1.0
        weights[f"b_{direction}"] = bias
    weights["V"] = rng.uniform(-bound, bound, (OUTPUT_DIM, 2 * hidden))
    weights["c"] = np.zeros(OUTPUT_DIM)
    return LstmParams(weights, dropout_rate, window)


def zero_params(hidden: int, window: int = 20) -> LstmParams:
    h = hidden
    shapes = {
        "Wx_fwd": (4 * h, INPUT_DIM), "Wh_fwd": (4 * h, h), "b_fwd": (4 * h,),
        "Wx_bwd": (4 * h, INPUT_DIM), "Wh_bwd": (4 * h, h), "b_bwd": (4 * h,),
        "V": (OUTPUT_DIM, 2 * h), "c": (OUTPUT_DIM,),
    }
    return LstmParams({k: np.zeros(s) for k, s in shapes.items()}, 0.0, window)


# ----- forward / backward -----

def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _run_direction(wx, wh, b, xs):
    """Unroll one direction over ``xs[B, T, D]``; returns the last hidden state and per-step caches."""
    batch, steps, _ = xs.shape
    h_size = wh.shape[1]
    h = np.zeros((batch, h_size))
    c = np.zeros((batch, h_size))
    caches = []
    for t in range(steps):
        x = xs[:, t, :]
        z = x @ wx.T + h @ wh.T + b
        i = _sigmoid(z[:, :h_size])
        f = _sigmoid(z[:, h_size : 2 * h_size])
        o = _sigmoid(z[:, 2 * h_size : 3 * h_size])
        g = np.tanh(z[:, 3 * h_size :])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        caches.append((x, h_prev, c_prev, i, f, o, g, tc))
    return h, caches


def _backprop_direction(wh, caches, dh_last):
    h_size = wh.shape[1]
    dwx = np.zeros((4 * h_size, caches[0][0].shape[1]))
    dwh = np.zeros((4 * h_size, h_size))
    db = np.zeros(4 * h_size)
    dh = dh_last
    dc = np.zeros_like(dh_last)
    for x, h_prev, c_prev, i, f, o, g, tc in reversed(caches):
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [dc * g * i * (1.0 - i), dc * c_prev * f * (1.0 - f), do * o * (1.0 - o), dc * i * (1.0 - g * g)],
            axis=1,
        )
        dwx += dz.T @ x
        dwh += dz.T @ h_prev
        db += dz.sum(axis=0)
        dh = dz @ wh
        dc = dc * f
    return dwx, dwh, db


def _as_batch(params: LstmParams, sequence) -> np.ndarray:
    xs = np.asarray(sequence, dtype=float)
    if xs.ndim == 2:
        xs = xs[None]
    if xs.ndim != 3 or xs.shape[2] != INPUT_DIM or xs.shape[1] < 1:
        raise ConfigurationError(f"sequence must have shape (W, {INPUT_DIM}) or (B, W, {INPUT_DIM}), got {np.shape(sequence)}")
    if xs.shape[1] != params.window:
        raise ConfigurationError(f"sequence length {xs.shape[1]} does not match the model window {params.window}")
    return xs


def _forward(params: LstmParams, xs: np.ndarray, training: bool, rng: np.random.Generator | None):
    w = params.weights
    h_fwd, cache_fwd = _run_direction(w["Wx_fwd"], w["Wh_fwd"], w["b_fwd"], xs)
    h_bwd, cache_bwd = _run_direction(w["Wx_bwd"], w["Wh_bwd"], w["b_bwd"], xs[:, ::-1, :])
    features = np.concatenate([h_fwd, h_bwd], axis=1)
    mask = np.ones_like(features)
    if training and params.dropout_rate > 0.0:
        rng = rng if rng is not None else np.random.default_rng()
        keep = 1.0 - params.dropout_rate
        mask = (rng.random(features.shape) < keep) / keep
    out = (features * mask) @ w["V"].T + w["c"]
    return out, (features, mask, cache_fwd, cache_bwd)


def lstm_forward(params: LstmParams, sequence, training: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
    """Normalized-space output for one ``(W, 6)`` sequence, or ``(B, 3)`` for a batch."""
    xs = _as_batch(params, sequence)
    out, _ = _forward(params, xs, training, rng)
    return out[0] if np.ndim(sequence) == 2 else out


def lstm_backward(
    params: LstmParams,
    sequence,
    target,
    loss_weight: float = 1.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss ``loss_weight * 0.5 * sum |y - target|^2`` and its gradients by BPTT."""
    xs = _as_batch(params, sequence)
    target = np.asarray(target, dtype=float).reshape(xs.shape[0], OUTPUT_DIM)
    out, (features, mask, cache_fwd, cache_bwd) = _forward(params, xs, training, rng)
    err = out - target
    loss = 0.5 * loss_weight * float(np.sum(err * err))

    w = params.weights
    h = params.hidden
    dy = loss_weight * err
    grads = {"V": dy.T @ (features * mask), "c": dy.sum(axis=0)}
    dfeat = (dy @ w["V"]) * mask
    grads["Wx_fwd"], grads["Wh_fwd"], grads["b_fwd"] = _backprop_direction(w["Wh_fwd"], cache_fwd, dfeat[:, :h])
    grads["Wx_bwd"], grads["Wh_bwd"], grads["b_bwd"] = _backprop_direction(w["Wh_bwd"], cache_bwd, dfeat[:, h:])
    return loss, grads


# ----- training -----

class TrainingHyper(BaseModel):
    model_config = ConfigDict(frozen=True)

    lr: float = 3e-3
    epochs: int = 40
    batch: int = 32
    clip: float = 1.0
    hidden: int = 32
    window: int = 20
    dropout: float = 0.25
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999

    @model_validator(mode="after")
    def _check(self):
        if self.lr <= 0.0 or self.clip <= 0.0:
            raise ValueError("lr and clip must be positive")
        if self.epochs < 0 or self.batch < 1 or self.hidden < 1 or self.window < 1:
            raise ValueError("epochs must be >= 0; batch, hidden and window >= 1")
        if self.hidden > 256:
            raise ValueError("hidden size is capped at 256")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        return self


@dataclass
class TrainingSet:
    """IMU windows ``[N, W, 6]`` with body-frame targets ``[N, 3]``.

    ``trajectory_ids`` tags each window with its source trajectory; windows of
    the trajectories in ``validation_ids`` are held out.
    """

    inputs: np.ndarray
    targets: np.ndarray
    trajectory_ids: np.ndarray
    validation_ids: frozenset[int] = frozenset()

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float).reshape(-1, OUTPUT_DIM)
        self.trajectory_ids = np.asarray(self.trajectory_ids, dtype=int).reshape(-1)
        if self.inputs.ndim != 3 or self.inputs.shape[2] != INPUT_DIM:
            raise ConfigurationError(f"inputs must have shape (N, W, {INPUT_DIM})")
        if not len(self.inputs) == len(self.targets) == len(self.trajectory_ids):
            raise ConfigurationError("inputs, targets and trajectory_ids must align")
        self.validation_ids = frozenset(int(i) for i in self.validation_ids)

    @property
    def train_mask(self) -> np.ndarray:
        return ~np.isin(self.trajectory_ids, sorted(self.validation_ids))

    def train_split(self) -> tuple[np.ndarray, np.ndarray]:
        m = self.train_mask
        return self.inputs[m], self.targets[m]

    def validation_split(self) -> tuple[np.ndarray, np.ndarray]:
        m = ~self.train_mask
        return self.inputs[m], self.targets[m]


def _clip_global_norm(grads: dict[str, np.ndarray], clip: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > clip:
        scale = clip / norm
        for g in grads.values():
            g *= scale
    return norm


def predict_displacement(params: LstmParams, windows) -> np.ndarray:
    """Metric body-frame targets for raw (unnormalized) IMU windows."""
    out = lstm_forward(params, params.input_norm.normalize(_as_batch(params, windows)))
    return params.target_norm.denormalize(out)


def _rmse(params: LstmParams, inputs, targets) -> float:
    if len(inputs) == 0:
        return float("nan")
    err = predict_displacement(params, inputs) - targets
    return float(np.sqrt(np.mean(np.sum(err * err, axis=1))))


def train(dataset: TrainingSet, hyper: TrainingHyper | None = None, progress: bool = False) -> LstmParams:
    """Adam with global-norm clipping over shuffled minibatches; deterministic given ``hyper.seed``."""
    hyper = hyper or TrainingHyper()
    inputs, targets = dataset.train_split()
    if len(inputs) == 0:
        raise DataError("training set has no training windows")
    if inputs.shape[1] != hyper.window:
        raise ConfigurationError(f"windows have length {inputs.shape[1]}, hyper.window is {hyper.window}")
    val_inputs, val_targets = dataset.validation_split()

    rng = np.random.default_rng(hyper.seed)
    params = init_params(hyper.hidden, rng, hyper.dropout, hyper.window)
    params.input_norm = Normalizer.fit(inputs)
    params.target_norm = Normalizer.fit(targets)
    x_norm = params.input_norm.normalize(inputs)
    y_norm = params.target_norm.normalize(targets)

    m = {k: np.zeros_like(v) for k, v in params.weights.items()}
    s = {k: np.zeros_like(v) for k, v in params.weights.items()}
    step = 0
    for epoch in tqdm(range(hyper.epochs), desc="train", disable=not progress):
        order = rng.permutation(len(x_norm))
        losses = []
        for start in range(0, len(order), hyper.batch):
            idx = order[start : start + hyper.batch]
            loss, grads = lstm_backward(params, x_norm[idx], y_norm[idx], 1.0 / len(idx), training=True, rng=rng)
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingFailureError(f"non-finite loss at epoch {epoch}")
            _clip_global_norm(grads, hyper.clip)
            step += 1
            for k, g in grads.items():
                m[k] = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * g
                s[k] = hyper.beta2 * s[k] + (1.0 - hyper.beta2) * g * g
                m_hat = m[k] / (1.0 - hyper.beta1**step)
                s_hat = s[k] / (1.0 - hyper.beta2**step)
                params.weights[k] -= hyper.lr * m_hat / (np.sqrt(s_hat) + 1e-8)
            losses.append(loss)
        params.history["train"].append(float(np.mean(losses)))
        params.history["validation"].append(_rmse(params, val_inputs, val_targets))
        logger.debug("epoch %d: loss %.5f, validation rmse %.5f", epoch, params.history["train"][-1], params.history["validation"][-1])
    return params


# ----- windows -----

def imu_window_pad(rows: np.ndarray, window: int) -> np.ndarray:
    if len(rows) == 0:
        return np.zeros((window, INPUT_DIM))
    rows = rows[-window:]
    if len(rows) < window:
        rows = np.vstack([np.repeat(rows[:1], window - len(rows), axis=0), rows])
    return rows


def imu_window(imu_t: np.ndarray, imu_data: np.ndarray, t0: float, t1: float, window: int) -> np.ndarray:
    """The last ``window`` IMU readings in ``(t0, t1]``, left-padded with the first one."""
    lo = np.searchsorted(imu_t, t0, side="right")
    hi = np.searchsorted(imu_t, t1 + 1e-9, side="right")
    rows = imu_data[lo:hi]
    if len(rows) == 0:
        # no reading inside the interval: hold the latest one before it
        rows = imu_data[max(hi - 1, 0) : max(hi, 1)]
    return imu_window_pad(rows, window)


def make_training_windows(
    imu_t, imu_data, frame_t, positions, quaternions, window: int, velocities=None
) -> tuple[np.ndarray, np.ndarray]:
    """Windows between consecutive frames and their body-frame targets.

    With ``velocities`` the target is the residual after constant-velocity
    prediction; without, it is the whole displacement.
    """
    inputs, targets = [], []
    rotations = quat_array_to_matrix(quaternions)
    velocities = np.zeros((len(frame_t), 3)) if velocities is None else np.asarray(velocities, dtype=float).reshape(-1, 3)
    for k in range(1, len(frame_t)):
        inputs.append(imu_window(imu_t, imu_data, frame_t[k - 1], frame_t[k], window))
        step = positions[k] - positions[k - 1] - velocities[k - 1] * (frame_t[k] - frame_t[k - 1])
        targets.append(rotations[k - 1].T @ step)
    return np.array(inputs).reshape(-1, window, INPUT_DIM), np.array(targets).reshape(-1, OUTPUT_DIM)


# ----- motion model interface -----

class MotionModel(ABC):
    name: str

    @abstractmethod
    def bind(self, imu_window: np.ndarray, dt: float) -> Callable[[np.ndarray], np.ndarray]:
        """Return ``f`` mapping sigma points ``[S, 13]`` to world displacements ``[S, 3]``."""

    def predict(self, inp: MotionModelInput) -> np.ndarray:
        window = np.array([s.as_array() for s in inp.imu_window]).reshape(-1, INPUT_DIM)
        return self.bind(window, inp.dt)(inp.prev_state.mean[None, :])[0]


class ConstantVelocityModel(MotionModel):
    name = "constant_velocity"

    def bind(self, imu_window, dt):
        return lambda sigma: sigma[:, 7:10] * dt


class LstmMotionModel(MotionModel):
    name = "rnn"

    def __init__(self, params: LstmParams):
        self.params = params

    def bind(self, imu_window, dt):
        window = np.asarray(imu_window, dtype=float).reshape(-1, INPUT_DIM)
        if len(window) != self.params.window:
            window = imu_window_pad(window, self.params.window)
        residual = predict_displacement(self.params, window[None])[0]

        def f(sigma):
            q = sigma[:, 3:7] / np.linalg.norm(sigma[:, 3:7], axis=1, keepdims=True)
            return sigma[:, 7:10] * dt + quat_array_to_matrix(q) @ residual

        return f


# ----- parameter file -----

def save_params(params: LstmParams, path: str | Path) -> Path:
    path = Path(path)
    doc = {
        "format": PARAMS_FORMAT,
        "version": PARAMS_VERSION,
        "hidden": params.hidden,
        "window": params.window,
        "input_dim": INPUT_DIM,
        "dropout_rate": params.dropout_rate,
        "normalization": {"input": params.input_norm.as_dict(), "target": params.target_norm.as_dict()},
        "history": params.history,
        "weights": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in params.weights.items()},
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1))
    return path


def load_params(path: str | Path) -> LstmParams:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read LSTM parameters from {path}: {exc}") from exc
    if doc.get("format") != PARAMS_FORMAT or doc.get("version") != PARAMS_VERSION:
        raise DataError(f"{path} is not a {PARAMS_FORMAT} v{PARAMS_VERSION} parameter file")
    if doc.get("input_dim") != INPUT_DIM:
        raise ConfigurationError(f"parameter file input_dim {doc.get('input_dim')} != {INPUT_DIM}")
    weights = {k: np.asarray(v["data"], dtype=float).reshape(v["shape"]) for k, v in doc["weights"].items()}
    return LstmParams(
        weights,
        float(doc["dropout_rate"]),
        int(doc["window"]),
        Normalizer.from_dict(doc["normalization"]["input"]),
        Normalizer.from_dict(doc["normalization"]["target"]),
        {k: list(v) for k, v in doc.get("history", {}).items()},
    )
