"""
Run visualization module. Top view of the estimated maps against the ground truth and degeneracy eigenvalue traces.
"""

from __future__ import annotations
from typing import TYPE_CHECKING

from geometry.pose import Pose
from mapping.degeneracy import DegeneracyConfig, Diagnostics
from runner.metrics import associate, umeyama_alignment

import matplotlib.pyplot as plt
import numpy as np
import os

from matplotlib.figure import Figure

if TYPE_CHECKING:
    from runner.pipeline import Pipeline

MAP_COLORS = ("#D1495B", "#EDAE49", "#00798C", "#30638E", "#8D6A9F", "#66A182")

def get_map_color(map_id: int) -> str:
    return MAP_COLORS[map_id % len(MAP_COLORS)]

def plot_trajectories(maps: dict[int, tuple[list[float], list[Pose]]], truth: tuple[list[float], list[Pose]], alignment: Pose | None = None) -> Figure:
    """Draws the keyframe trajectory of every map over the ground truth, seen from above.
        - maps: dictionary of (timestamps, poses) per map id.
        - truth: (timestamps, poses) of the ground truth.
        - alignment (optional): Pose object applied to every estimated position. Identity by default."""
    if not isinstance(maps, dict):
        raise TypeError(f"unsupported parameter type(s) for maps: '{type(maps).__name__}'")
    alignment = alignment if alignment is not None else Pose()

    fig, ax = plt.subplots(figsize=(6.0, 5.0))
    true_positions = np.array([pose.translation for pose in truth[1]]).reshape(-1, 3)
    ax.plot(true_positions[:, 0], true_positions[:, 1], color="black", linewidth=1.0, linestyle="--", label="Ground truth", zorder=1)
    for map_id, (_, poses) in sorted(maps.items()):
        if not poses:
            continue
        positions = alignment.transform_points(np.array([pose.translation for pose in poses]))
        ax.plot(positions[:, 0], positions[:, 1], color=get_map_color(map_id), linewidth=1.5, marker=".", markersize=3,
                label=f"Map {map_id}", zorder=2)

    ax.set_aspect("equal")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.legend(loc="upper right", fontsize=8)
    return fig

def plot_degeneracy(diagnostics: list[Diagnostics], config: DegeneracyConfig | None = None) -> Figure:
    """Draws the largest rotation and translation covariance eigenvalues over time with the detector's thresholds.
    Flagged frames are marked."""
    config = config if config is not None else DegeneracyConfig()
    times = np.array([row.timestamp for row in diagnostics])
    flagged = np.array([row.flag for row in diagnostics], dtype=bool)

    fig, axes = plt.subplots(2, 1, sharex=True, figsize=(7.0, 5.0))
    for ax, name, major, minor, unit in ((axes[0], "lambda_r", config.xi_major_r, config.xi_minor_r, "rad$^2$"),
                                         (axes[1], "lambda_t", config.xi_major_t, config.xi_minor_t, "m$^2$")):
        values = np.array([getattr(row, name) for row in diagnostics])
        ax.semilogy(times, values, color="#30638E", linewidth=1.0)
        ax.axhline(major, color="#D1495B", linewidth=1.0, label="major")
        ax.axhline(minor, color="#EDAE49", linewidth=1.0, linestyle="--", label="minor")
        if flagged.any():
            ax.scatter(times[flagged], values[flagged], color="#D1495B", marker="x", s=12, zorder=3)
        ax.set_ylabel(f"{name} ({unit})")
        ax.legend(loc="upper right", fontsize=8)
    axes[1].set_xlabel("t (s)")
    return fig

def save_run_plots(pipeline: Pipeline, run_dir: str) -> list[str]:
    """Saves trajectories.png and degeneracy.png in a run directory and returns their paths."""
    os.makedirs(run_dir, exist_ok=True)
    database = pipeline.database
    maps = {map_id: database.trajectory(map_id) for map_id in database.map_ids() if database.maps[map_id].status != "merged"}

    estimate = pipeline.estimated_trajectory()
    pairs = associate(estimate[0], pipeline.truth[0])
    alignment = None
    if len(pairs) >= 3:
        alignment = umeyama_alignment([estimate[1][i].translation for i, _ in pairs], [pipeline.truth[1][j].translation for _, j in pairs])

    written = []
    for file_name, fig in (("trajectories.png", plot_trajectories(maps, pipeline.truth, alignment)),
                           ("degeneracy.png", plot_degeneracy(pipeline.get_diagnostics(), pipeline.detector.config))):
        file_path = os.path.join(run_dir, file_name)
        fig.savefig(file_path)
        plt.close(fig)
        written.append(file_path)
    return written
