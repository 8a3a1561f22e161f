"""
LiDAR model module: ray casting against the world and over-degeneracy injection.
"""

from numpy.random import Generator
from numpy.typing import NDArray

from geometry.pose import Pose
from simulation.scenario import DegeneracyEvent, Scenario
from simulation.world.box import Box, intersect_boxes
from simulation.world.shape import Shape

import numpy as np

def cast_rays(world: list[Shape], origins: NDArray[np.float64], directions: NDArray[np.float64]) -> NDArray[np.float64]:
    """Returns the distance to the nearest surface for each ray, inf when nothing is hit."""
    origins = np.atleast_2d(origins)
    directions = np.atleast_2d(directions)
    if len(origins) == 1 and len(directions) > 1:
        origins = np.repeat(origins, len(directions), axis=0)
    distances = np.full(len(directions), np.inf)

    boxes = [shape for shape in world if isinstance(shape, Box)]
    if boxes:
        lowers = np.array([box.lower for box in boxes])
        uppers = np.array([box.upper for box in boxes])
        distances = np.minimum(distances, intersect_boxes(origins, directions, lowers, uppers).min(axis=1))
    for shape in world:
        if not isinstance(shape, Box):
            distances = np.minimum(distances, shape.intersect(origins, directions))
    return distances

def raycast_scan(scenario: Scenario, pose: Pose, generator: Generator) -> NDArray[np.float64]:
    """Simulates one scan from a sensor pose (world <- sensor). Returns the (N, 3) hits in the sensor frame.

    Each range gets Gaussian noise. Misses and noisy ranges outside [min_range, max_range] are omitted."""
    spec = scenario.lidar_spec
    directions = spec.beam_directions()
    if not scenario.world:
        return np.empty((0, 3))

    world_directions = pose.rotation.apply(directions)
    ranges = cast_rays(scenario.world, pose.translation[np.newaxis], world_directions)
    hit = ranges <= spec.max_range
    ranges = ranges[hit]
    directions = directions[hit]

    if spec.noise_sigma > 0.0:
        ranges = ranges + generator.normal(0.0, spec.noise_sigma, size=len(ranges))
    valid = (ranges >= spec.min_range) & (ranges <= spec.max_range)
    return directions[valid] * ranges[valid, np.newaxis]

def inject_degeneracy(scan: NDArray[np.float64], event: DegeneracyEvent, generator: Generator) -> NDArray[np.float64]:
    """Degrades a sensor-frame scan as described by the event."""
    if event.mode == "drop":
        count = int(event.value)
        if count >= len(scan):
            return scan
        kept = np.sort(generator.choice(len(scan), size=count, replace=False))
        return scan[kept]

    if event.mode == "clamp":
        return scan[np.linalg.norm(scan, axis=1) <= event.value]

    # occlusion: angular distance to the sector's center, in degrees
    azimuths = np.degrees(np.arctan2(scan[:, 1], scan[:, 0]))
    offsets = np.abs((azimuths - event.azimuth + 180.0) % 360.0 - 180.0)
    if event.value >= 360.0:
        return scan[:0]
    return scan[offsets > 0.5 * event.value]
