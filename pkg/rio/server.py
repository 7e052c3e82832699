"""
FastAPI server exposing simulation, odometry runs and trajectory evaluation.

Endpoints:
- GET  /health
- POST /simulate   -> simulate a scenario, optionally writing the dataset
- POST /run        -> run one pipeline variant and report its ATE
- POST /evaluate   -> ATE of an estimate against ground truth

Run: uvicorn rio.server:app --port 8000
"""

from __future__ import annotations

import logging
import time
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__, settings
from .config import Variant, load_config
from .dataset import read_dataset, simulate_dataset, write_dataset, write_manifest
from .errors import ConfigurationError, RioError
from .evaluation import ate, synchronize
from .pipeline import run_variants
from .trajectory import path_length, trajectory_arrays, trajectory_from_arrays

logger = logging.getLogger(__name__)

app = FastAPI(title="rio", version=__version__)


class SimulateBody(BaseModel):
    config: dict = Field(default_factory=dict)
    seed: int | None = None
    out: str | None = None


class SimulateResult(BaseModel):
    frames: int
    imu_samples: int
    landmarks: int
    duration_s: float
    path_length_m: float
    mean_points_per_frame: float
    out: str | None = None


class RunBody(BaseModel):
    config: dict = Field(default_factory=dict)
    variant: Variant = Variant.FULL


class RunResultBody(BaseModel):
    variant: str
    frames: int
    corrected_frames: int
    coasted_frames: int
    ate: dict
    trajectory: list[list[float]]


class EvaluateBody(BaseModel):
    estimate: list[list[float]]
    groundtruth: list[list[float]]
    max_gap: float = 0.005
    align: bool = False


def _config(data: dict, seed: int | None = None):
    config = load_config(None, **data)
    if seed is not None:
        update = {"seed": seed}
        if config.scenario is not None:
            update["scenario"] = config.scenario.model_copy(update={"seed": seed})
        config = config.model_copy(update=update)
    return config


def _trajectory(rows: list[list[float]]):
    arr = np.asarray(rows, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 8:
        raise ConfigurationError("trajectory rows must be [t, px, py, pz, qw, qx, qy, qz]")
    return trajectory_from_arrays(arr[:, 0], arr[:, 1:4], arr[:, 4:8])


def _rows(traj) -> list[list[float]]:
    t, pos, quat = trajectory_arrays(traj)
    return np.column_stack([t, pos, quat]).tolist()


@app.get("/health")
def health():
    return {"status": "ok", "version": __version__}


@app.post("/simulate", response_model=SimulateResult)
def simulate(body: SimulateBody):
    try:
        started = time.time()
        config = _config(body.config, body.seed)
        if config.scenario is None:
            raise ConfigurationError("simulate needs a scenario")
        dataset = simulate_dataset(config.scenario, config.radar)
        if body.out:
            write_dataset(dataset, body.out)
            write_manifest(Path(body.out), "simulate", config.snapshot(), {"scenario": config.scenario.seed}, started)
        times = dataset.frame_times
        return SimulateResult(
            frames=len(dataset.scans),
            imu_samples=len(dataset.imu),
            landmarks=len(dataset.environment.landmarks),
            duration_s=float(times[-1] - times[0]),
            path_length_m=path_length(dataset.ground_truth),
            mean_points_per_frame=float(np.mean([len(s) for s in dataset.scans])),
            out=body.out,
        )
    except RioError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.exception("simulate failed")
        raise HTTPException(status_code=500, detail=str(e))


@app.post("/run", response_model=RunResultBody)
def run(body: RunBody):
    try:
        config = _config(body.config)
        if config.scenario is not None:
            dataset = simulate_dataset(config.scenario, config.radar)
        else:
            dataset = read_dataset(config.dataset)
        result = run_variants(dataset, config, [body.variant])[body.variant.value]
        pairs = synchronize(result.trajectory, dataset.ground_truth, config.max_sync_gap)
        report = ate(pairs, align=config.align_ate)
        return RunResultBody(
            variant=body.variant.value,
            frames=len(result.trajectory),
            corrected_frames=result.corrected_frames,
            coasted_frames=result.coasted_frames,
            ate={**report.as_dict(), "dropped": pairs.dropped},
            trajectory=_rows(result.trajectory),
        )
    except RioError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.exception("run failed")
        raise HTTPException(status_code=500, detail=str(e))


@app.post("/evaluate")
def evaluate(body: EvaluateBody):
    try:
        pairs = synchronize(_trajectory(body.estimate), _trajectory(body.groundtruth), body.max_gap)
        report = ate(pairs, align=body.align)
        return {**report.as_dict(), "dropped": pairs.dropped}
    except RioError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        raise HTTPException(status_code=500, detail=str(e))


if __name__ == "__main__":
    import uvicorn

    settings.configure_logging()
    uvicorn.run("rio.server:app", host="0.0.0.0", port=settings.API_PORT)
