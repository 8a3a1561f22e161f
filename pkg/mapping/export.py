"""
Map export module: keyframe trajectories (TUM), pose graphs (g2o) and the merged point cloud (ASCII PLY).
"""

from numpy.typing import ArrayLike, NDArray
from typing import Iterable

from geometry.pose import Pose
from geometry.tum import save_tum
from mapping.local_map import voxel_downsample
from mapping.map_manager import MapDatabase
from mapping.pose_graph import save_g2o

import bisect
import logging
import numpy as np
import os

logger = logging.getLogger(__name__)

PLY_HEADER = "ply\nformat ascii 1.0\nelement vertex {count}\nproperty float x\nproperty float y\nproperty float z\nend_header"

def save_ply(file_path: str, points: ArrayLike) -> None:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    np.savetxt(file_path, points, fmt="%.6f", header=PLY_HEADER.format(count=len(points)), comments="")

def load_ply(file_path: str) -> NDArray[np.float64]:
    """Vertices of an ASCII PLY file holding x y z properties only."""
    with open(file_path, "r") as ply_file:
        lines = ply_file.read().splitlines()
    if not lines or lines[0] != "ply" or "end_header" not in lines:
        raise ValueError(f"{file_path} is not an ASCII PLY file.")
    count = next(int(line.split()[-1]) for line in lines if line.startswith("element vertex"))
    start = lines.index("end_header") + 1
    if count == 0:
        return np.empty((0, 3))
    return np.loadtxt(lines[start:start + count], dtype=np.float64).reshape(-1, 3)

def merged_cloud(database: MapDatabase, voxel_size: float = 0.2) -> NDArray[np.float64]:
    """Clouds of every map that was not merged into another one, moved by the optimized keyframe poses and downsampled."""
    clouds = [database.map_cloud(map_id) for map_id in database.map_ids() if database.maps[map_id].status != "merged"]
    points = np.concatenate(clouds) if clouds else np.empty((0, 3))
    return voxel_downsample(points, voxel_size)

def export_database(directory: str, database: MapDatabase, voxel_size: float = 0.2) -> list[str]:
    """Writes keyframes_map<id>.tum and map<id>.g2o per remaining map, and merged_map.ply. Returns the written paths."""
    os.makedirs(directory, exist_ok=True)
    written = []
    for map_id in database.map_ids():
        if database.maps[map_id].status == "merged":
            continue
        timestamps, poses = database.trajectory(map_id)
        tum_path = os.path.join(directory, f"keyframes_map{map_id}.tum")
        save_tum(tum_path, timestamps, poses)
        g2o_path = os.path.join(directory, f"map{map_id}.g2o")
        save_g2o(g2o_path, database.maps[map_id].graph)
        written += [tum_path, g2o_path]

    ply_path = os.path.join(directory, "merged_map.ply")
    cloud = merged_cloud(database, voxel_size)
    save_ply(ply_path, cloud)
    written.append(ply_path)
    logger.info(f"{database.submap_count()} maps exported to {directory}: {len(cloud)} points")
    return written

def cloud_from_trajectory(scans: Iterable[tuple[float, ArrayLike]], trajectory: tuple[list[float], list[Pose]], voxel_size: float = 0.2,
                          max_difference: float = 0.05) -> NDArray[np.float64]:
    """Accumulates sensor-frame scans at the trajectory pose of the nearest timestamp. Scans without a pose within
    max_difference seconds are skipped."""
    timestamps, poses = trajectory
    clouds = []
    for timestamp, scan in scans:
        if not timestamps:
            break
        k = bisect.bisect_left(timestamps, timestamp)
        nearest = min((j for j in (k - 1, k) if 0 <= j < len(timestamps)), key=lambda j: abs(timestamps[j] - timestamp))
        if abs(timestamps[nearest] - timestamp) <= max_difference:
            clouds.append(poses[nearest].transform_points(np.asarray(scan, dtype=np.float64).reshape(-1, 3)))
            if len(clouds) >= 64:
                clouds = [voxel_downsample(np.concatenate(clouds), voxel_size)]
    points = np.concatenate(clouds) if clouds else np.empty((0, 3))
    return voxel_downsample(points, voxel_size)
