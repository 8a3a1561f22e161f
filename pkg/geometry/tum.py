"""
TUM trajectory files: one "t tx ty tz qx qy qz qw" line per pose, 9 significant digits.
"""

from geometry.pose import Pose
from geometry.rotation import Rotation

def format_tum_line(timestamp: float, pose: Pose) -> str:
    w, x, y, z = pose.rotation.q
    tx, ty, tz = pose.translation
    return " ".join(f"{value:.9g}" for value in (timestamp, tx, ty, tz, x, y, z, w))

def save_tum(file_path: str, timestamps: list[float], poses: list[Pose]) -> None:
    if not len(timestamps) == len(poses):
        raise ValueError(f"got {len(poses)} poses for {len(timestamps)} timestamps.")
    with open(file_path, "w") as tum_file:
        for timestamp, pose in zip(timestamps, poses):
            tum_file.write(format_tum_line(timestamp, pose) + "\n")

def load_tum(file_path: str) -> tuple[list[float], list[Pose]]:
    timestamps = []
    poses = []
    with open(file_path, "r") as tum_file:
        for line in tum_file:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            values = [float(value) for value in line.split()]
            if not len(values) == 8:
                raise ValueError(f"TUM lines must have 8 values, not {len(values)}.")
            timestamps.append(values[0])
            poses.append(Pose(Rotation((values[7], values[4], values[5], values[6])), values[1:4]))
    return timestamps, poses
