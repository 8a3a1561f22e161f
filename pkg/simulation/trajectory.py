"""
Trajectory class module.

Ground-truth motion through timed control poses. Translation is a cubic Hermite spline. Rotation is a cubic Hermite
curve on the rotation vector local to each segment, R(t) = R_i Exp(r(t)), whose knot slopes are chosen so that the
body angular velocity is continuous.
"""

from __future__ import annotations
from dataclasses import dataclass
from numpy.typing import ArrayLike, NDArray

from geometry.pose import Pose
from geometry.rotation import Rotation, so3_right_jacobian, so3_right_jacobian_inverse
from simulation.exceptions import ScenarioError, TrajectoryRangeError

import numpy as np

from scipy.interpolate import CubicHermiteSpline

@dataclass(frozen=True, eq=False)
class TrajectorySample:
    """Interpolated state: pose (world <- body), world velocity (m/s), body angular velocity (rad/s), world acceleration (m/s^2)."""
    pose: Pose
    velocity: NDArray[np.float64]
    angular_velocity: NDArray[np.float64]
    acceleration: NDArray[np.float64]

class Trajectory:
    """Smooth ground-truth trajectory through timed control poses."""
    times: NDArray[np.float64]
    poses: list[Pose]
    velocities: NDArray[np.float64]
    angular_velocities: NDArray[np.float64]
    _spline: CubicHermiteSpline
    _deltas: NDArray[np.float64]

    def __init__(self, times: ArrayLike, poses: list[Pose], velocities: ArrayLike | None = None, angular_velocities: ArrayLike | None = None):
        """Smooth ground-truth trajectory through timed control poses.
            - times: strictly increasing control times, in seconds. At least two are needed.
            - poses: list of Pose objects (world <- body), one per control time.
            - velocities (optional): (N, 3) world velocities at the control times, in m/s. Estimated by finite differences when omitted.
            - angular_velocities (optional): (N, 3) body angular velocities at the control times, in rad/s. Estimated from the neighbouring segments when omitted."""
        times = np.array(times, dtype=np.float64).reshape(-1)
        if len(times) < 2:
            raise ScenarioError(f"a trajectory needs at least 2 control poses, not {len(times)}.", "trajectory")
        if not np.all(np.diff(times) > 0.0):
            raise ScenarioError("trajectory control times must be strictly increasing.", "trajectory.t")
        if not len(poses) == len(times):
            raise ScenarioError(f"got {len(poses)} control poses for {len(times)} control times.", "trajectory")
        for pose in poses:
            if not isinstance(pose, Pose):
                raise TypeError(f"unsupported parameter type(s) for poses: '{type(pose).__name__}'")

        positions = np.array([pose.translation for pose in poses])
        intervals = np.diff(times)
        deltas = np.array([(a.rotation.inverse() * b.rotation).as_rotvec() for a, b in zip(poses[:-1], poses[1:])])

        if velocities is None:
            velocities = np.gradient(positions, times, axis=0)
        velocities = np.array(velocities, dtype=np.float64).reshape(len(times), 3)

        if angular_velocities is None:
            rates = deltas / intervals[:, np.newaxis]
            angular_velocities = np.empty((len(times), 3))
            angular_velocities[0] = rates[0]
            angular_velocities[-1] = rates[-1]
            angular_velocities[1:-1] = 0.5 * (rates[:-1] + rates[1:])
        angular_velocities = np.array(angular_velocities, dtype=np.float64).reshape(len(times), 3)

        self.times = times
        self.poses = [pose.copy() for pose in poses]
        self.velocities = velocities
        self.angular_velocities = angular_velocities
        self._spline = CubicHermiteSpline(times, positions, velocities, axis=0)
        self._deltas = deltas

    @property
    def start_time(self) -> float:
        return float(self.times[0])

    @property
    def end_time(self) -> float:
        return float(self.times[-1])

    def _segment(self, t: float) -> int:
        if not self.start_time <= t <= self.end_time:
            raise TrajectoryRangeError(f"t = {t} is outside of the trajectory's span [{self.start_time}, {self.end_time}].")
        return int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2))

    def _local_rotation(self, index: int, t: float) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Returns r(t) and dr/dt on a segment."""
        h = self.times[index + 1] - self.times[index]
        s = (t - self.times[index]) / h
        delta = self._deltas[index]
        slope_start = self.angular_velocities[index]
        slope_end = so3_right_jacobian_inverse(delta) @ self.angular_velocities[index + 1]

        r = h * (s**3 - 2.0 * s**2 + s) * slope_start + (3.0 * s**2 - 2.0 * s**3) * delta + h * (s**3 - s**2) * slope_end
        dr = (3.0 * s**2 - 4.0 * s + 1.0) * slope_start + (6.0 * s - 6.0 * s**2) / h * delta + (3.0 * s**2 - 2.0 * s) * slope_end
        return r, dr

    def rotation_at(self, t: float) -> Rotation:
        index = self._segment(t)
        r, _ = self._local_rotation(index, t)
        return self.poses[index].rotation * Rotation.from_rotvec(r)

    def interpolate(self, t: float) -> TrajectorySample:
        """Returns the pose and its derivatives at time t."""
        t = float(t)
        index = self._segment(t)
        r, dr = self._local_rotation(index, t)
        rotation = self.poses[index].rotation * Rotation.from_rotvec(r)

        return TrajectorySample(pose=Pose(rotation, self._spline(t)),
                                velocity=np.asarray(self._spline(t, 1), dtype=np.float64),
                                angular_velocity=so3_right_jacobian(r) @ dr,
                                acceleration=np.asarray(self._spline(t, 2), dtype=np.float64))

    def pose_at(self, t: float) -> Pose:
        return self.interpolate(t).pose

    def to_dict(self) -> list[dict]:
        return [{"t": float(t), "position": pose.translation.tolist(), "quaternion": pose.rotation.q.tolist(),
                 "velocity": velocity.tolist(), "angular_velocity": angular_velocity.tolist()}
                for t, pose, velocity, angular_velocity in zip(self.times, self.poses, self.velocities, self.angular_velocities)]

    @classmethod
    def from_dict(cls, control_points: list[dict]) -> Trajectory:
        """Builds a trajectory from its json description. Velocities are only used when every control point has them."""
        try:
            times = [float(point["t"]) for point in control_points]
            poses = [Pose(Rotation(point.get("quaternion", (1.0, 0.0, 0.0, 0.0))), point["position"]) for point in control_points]
        except (KeyError, TypeError, ValueError) as error:
            raise ScenarioError(f"invalid trajectory control point: {error}", "trajectory") from error
        velocities = None
        angular_velocities = None
        if all("velocity" in point for point in control_points):
            velocities = [point["velocity"] for point in control_points]
        if all("angular_velocity" in point for point in control_points):
            angular_velocities = [point["angular_velocity"] for point in control_points]
        return cls(times, poses, velocities, angular_velocities)

def trajectory_from_function(motion, t_start: float, t_end: float, knot_interval: float = 0.25, step: float = 1e-5) -> Trajectory:
    """Samples a motion function t -> Pose into control poses. Knot derivatives are taken by central differences."""
    count = max(int(np.ceil((t_end - t_start) / knot_interval)), 1)
    times = np.linspace(t_start, t_end, count + 1)
    poses = []
    velocities = []
    angular_velocities = []
    for t in times:
        before = motion(max(t - step, t_start))
        after = motion(min(t + step, t_end))
        span = min(t + step, t_end) - max(t - step, t_start)
        poses.append(motion(t))
        velocities.append((after.translation - before.translation) / span)
        angular_velocities.append((before.rotation.inverse() * after.rotation).as_rotvec() / span)
    return Trajectory(times, poses, velocities, angular_velocities)
