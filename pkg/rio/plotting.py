"""SVG figures: trajectory overlays and error-vs-time curves.

Output is deterministic: a fixed SVG hash salt, no date metadata and text
kept as ``<text>`` elements.
"""

from __future__ import annotations

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .core import Pose, Timestamped  # noqa: E402
from .evaluation import AteReport  # noqa: E402

logger = logging.getLogger(__name__)

MARGIN = 0.05
GROUND_TRUTH = "gt"
PLACEHOLDER = "no data to plot"

matplotlib.rcParams.update({"svg.hashsalt": "rio", "svg.fonttype": "none", "path.simplify": False})


def padded_limits(values, margin: float = MARGIN) -> tuple[float, float]:
    """Data range widened by ``margin`` of its span on each side."""
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    if values.size == 0:
        return -1.0, 1.0
    lo, hi = float(values.min()), float(values.max())
    span = hi - lo
    if span == 0.0:
        span = max(abs(lo), 1.0)
    return lo - margin * span, hi + margin * span


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _placeholder(ax, message: str = PLACEHOLDER) -> None:
    ax.text(0.5, 0.5, message, ha="center", va="center", transform=ax.transAxes, gid="placeholder")
    ax.set_xticks([])
    ax.set_yticks([])


def trajectory_figure(trajectories: dict[str, list[Timestamped[Pose]]], title: str = "trajectory"):
    """x-y overlay; the ground truth goes under the key ``"gt"``."""
    fig, ax = plt.subplots(figsize=(7, 6))
    series = {name: np.array([s.value.position[:2] for s in traj]).reshape(-1, 2) for name, traj in trajectories.items()}
    series = {name: xy for name, xy in series.items() if len(xy)}
    if not series:
        _placeholder(ax, "empty trajectory")
        ax.set_title(title)
        return fig, ax

    order = sorted(series, key=lambda name: (name != GROUND_TRUTH, name))
    for name in order:
        xy = series[name]
        style = {"color": "black", "linewidth": 2.0} if name == GROUND_TRUTH else {"linewidth": 1.2}
        ax.plot(xy[:, 0], xy[:, 1], label=name, gid=f"trajectory-{name}", **style)
    stacked = np.vstack(list(series.values()))
    ax.set_xlim(*padded_limits(stacked[:, 0]))
    ax.set_ylim(*padded_limits(stacked[:, 1]))
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(title)
    ax.grid(alpha=0.5)
    ax.legend(loc="best")
    return fig, ax


def plot_trajectories(trajectories: dict[str, list[Timestamped[Pose]]], path: str | Path, title: str = "trajectory") -> Path:
    fig, _ = trajectory_figure(trajectories, title)
    return _save(fig, path)


def error_figure(reports: dict[str, AteReport]):
    """Translational (cm) and rotational (deg) error against time."""
    fig, (ax_t, ax_r) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    reports = {name: r for name, r in reports.items() if len(r.times)}
    if not reports:
        _placeholder(ax_t)
        _placeholder(ax_r)
        return fig, (ax_t, ax_r)

    for name in sorted(reports):
        report = reports[name]
        ax_t.plot(report.times, report.translational_cm, label=name, gid=f"translation-{name}", linewidth=1.2)
        ax_r.plot(report.times, report.rotational_deg, label=name, gid=f"rotation-{name}", linewidth=1.2)
    times = np.concatenate([r.times for r in reports.values()])
    ax_r.set_xlim(*padded_limits(times))
    ax_t.set_ylim(*padded_limits(np.concatenate([[0.0], *[r.translational_cm for r in reports.values()]])))
    ax_r.set_ylim(*padded_limits(np.concatenate([[0.0], *[r.rotational_deg for r in reports.values()]])))
    ax_t.set_ylabel("translation error [cm]")
    ax_r.set_ylabel("rotation error [deg]")
    ax_r.set_xlabel("t [s]")
    for ax in (ax_t, ax_r):
        ax.grid(alpha=0.5)
    ax_t.legend(loc="upper left")
    return fig, (ax_t, ax_r)


def plot_errors(reports: dict[str, AteReport], path: str | Path) -> Path:
    fig, _ = error_figure(reports)
    return _save(fig, path)
