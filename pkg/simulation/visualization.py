"""
Simulation visualization module. Top views of a scenario's world and ground-truth trajectory.
"""

from simulation.scenario import Scenario
from simulation.simulator import Simulator
from simulation.world.box import Box

import matplotlib.pyplot as plt
import numpy as np
import os

from matplotlib import patches as mpatches
from matplotlib.figure import Figure

def get_height_color(height: float, max_height: float) -> tuple[float, float, float]:
    """Returns a grey level going from light (low shapes) to dark (tall shapes)."""
    value = 0.8 - 0.6 * min(max(height / max_height, 0.0), 1.0) if max_height > 0.0 else 0.5
    return (value, value, value)

def plot_world_and_trajectory(scenario: Scenario, samples: int = 2000, show_events: bool = True) -> Figure:
    """Draws the boxes of the world seen from above along with the ground-truth trajectory.
        - scenario: Scenario object to draw.
        - samples (optional): number of trajectory samples drawn.
        - show_events (optional): whether the trajectory parts inside degeneracy events are highlighted."""
    if not isinstance(scenario, Scenario):
        raise TypeError(f"unsupported parameter type(s) for scenario: '{type(scenario).__name__}'")
    if not samples >= 2:
        raise ValueError(f"given sample count ({samples}) must be at least 2.")

    fig, ax = plt.subplots(figsize=(6.0, 5.0))
    boxes = [shape for shape in scenario.world if isinstance(shape, Box)]
    max_height = max((box.upper[2] for box in boxes), default=1.0)
    for box in boxes:
        ax.add_patch(mpatches.Polygon(box.get_footprint(), closed=True, facecolor=get_height_color(box.upper[2], max_height),
                                      edgecolor="black", linewidth=0.3, zorder=1))

    trajectory = scenario.trajectory
    times = np.linspace(trajectory.start_time, trajectory.end_time, samples)
    positions = np.array([trajectory.pose_at(t).translation for t in times])
    ax.plot(positions[:, 0], positions[:, 1], color="#5EC6C8", linewidth=1.5, label="Ground truth", zorder=2)
    ax.scatter(positions[0, 0], positions[0, 1], color="black", marker="o", label="Start", zorder=4)

    if show_events:
        for i, event in enumerate(scenario.events):
            inside = (times >= event.t_start) & (times < event.t_end)
            ax.plot(positions[inside, 0], positions[inside, 1], color="#D1495B", linewidth=3.0,
                    label="Degeneracy event" if i == 0 else None, zorder=3)

    ax.set_aspect("equal")
    ax.autoscale_view()
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title(scenario.name)
    ax.legend(loc="upper right", fontsize=8)
    return fig

def save_world_and_trajectory(simulator: Simulator, file_name: str = "world") -> str:
    """Saves the top view of a simulator's scenario in its result directory and returns the file's path."""
    if not isinstance(simulator, Simulator):
        raise TypeError(f"unsupported parameter type(s) for simulator: '{type(simulator).__name__}'")
    os.makedirs(simulator.get_simulation_dir(), exist_ok=True)
    file_path = os.path.join(simulator.get_simulation_dir(), f"{file_name}.png")
    fig = plot_world_and_trajectory(simulator.scenario)
    fig.savefig(file_path)
    plt.close(fig)
    return file_path
