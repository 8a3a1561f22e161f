"""
LiDAR-inertial odometry frontend module.

A simplified stand-in for an error-state iterated Kalman filter: the IMU propagates the pose and its covariance, then
a point-to-plane registration against the local map fuses the scan as a measurement (maximum a posteriori). The
frontend publishes, frame after frame, the pose and the 6x6 pose covariance consumed by the degeneracy detector.
"""

from __future__ import annotations
from dataclasses import dataclass, field, replace
from numpy.typing import ArrayLike, NDArray

from geometry.pose import Pose, boxminus
from geometry.rotation import Rotation, hat
from geometry.tum import save_tum
from mapping.exceptions import MapLifecycleError
from mapping.initialization import InitResult, static_initialize
from mapping.local_map import LocalMap
from mapping.preintegration import ImuSample
from mapping.registration import RegistrationConfig, RegistrationResult, register

import csv
import logging
import numpy as np

logger = logging.getLogger(__name__)

COVARIANCE_CSV_HEADER = ("t",) + tuple(f"c{i}{j}" for i, j in zip(*np.triu_indices(6)))

@dataclass
class FrontendConfig:
    """Odometry parameters. Process noise densities are per second of propagation."""
    voxel_size: float = 0.5
    max_points_per_voxel: int = 10
    process_noise_rotation: float = 1e-6
    process_noise_translation: float = 1e-4
    initial_sigma_rotation: float = 1e-3
    initial_sigma_translation: float = 1e-3
    velocity_gain: float = 0.5
    map_radius: float = 60.0
    crop_distance: float = 10.0
    max_variance: float = 1e4
    gravity_magnitude: float = 9.81
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)

    def __post_init__(self):
        if isinstance(self.registration, dict):
            self.registration = RegistrationConfig(**self.registration)
        if not isinstance(self.registration, RegistrationConfig):
            raise TypeError(f"unsupported parameter type(s) for registration: '{type(self.registration).__name__}'")
        for name in ("voxel_size", "process_noise_rotation", "process_noise_translation", "initial_sigma_rotation", "initial_sigma_translation",
                     "map_radius", "crop_distance", "max_variance", "gravity_magnitude"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be bigger then zero, not {getattr(self, name)}.")
        if not 0.0 <= self.velocity_gain <= 1.0:
            raise ValueError(f"velocity_gain must lie in [0, 1], not {self.velocity_gain}.")

    def process_noise(self, dt: float) -> NDArray[np.float64]:
        return np.diag([self.process_noise_rotation * dt] * 3 + [self.process_noise_translation * dt] * 3)

    def initial_covariance(self) -> NDArray[np.float64]:
        return np.diag([self.initial_sigma_rotation**2] * 3 + [self.initial_sigma_translation**2] * 3)

@dataclass
class LioState:
    """Robot state at a timestamp. The covariance is over the (rotation, translation) error of the pose, rotation first."""
    timestamp: float
    pose: Pose
    velocity: NDArray[np.float64]
    b_w: NDArray[np.float64]
    b_a: NDArray[np.float64]
    gravity: NDArray[np.float64]
    cov: NDArray[np.float64]
    last_imu: ImuSample | None = None

    def copy(self) -> LioState:
        return replace(self, pose=self.pose.copy(), velocity=self.velocity.copy(), b_w=self.b_w.copy(), b_a=self.b_a.copy(),
                       gravity=self.gravity.copy(), cov=self.cov.copy())

    @classmethod
    def from_init(cls, timestamp: float, result: InitResult, pose: Pose, cov: ArrayLike, velocity: ArrayLike | None = None) -> LioState:
        """State right after an initialization, expressed in the gravity-aligned map frame."""
        velocity = result.aligned_velocities()[-1] if velocity is None else velocity
        return cls(timestamp=float(timestamp), pose=pose.copy(), velocity=np.array(velocity, dtype=np.float64), b_w=np.array(result.b_w, dtype=np.float64),
                   b_a=np.zeros(3), gravity=np.array(result.aligned_gravity(), dtype=np.float64), cov=np.array(cov, dtype=np.float64))

@dataclass(frozen=True, eq=False)
class OdometryRecord:
    """Immutable per-frame output of the frontend."""
    timestamp: float
    pose: Pose
    covariance: NDArray[np.float64]
    scan: NDArray[np.float64]
    converged: bool
    iterations: int
    degenerate: bool
    information: NDArray[np.float64]

def propagate(state: LioState, imu: list[ImuSample], config: FrontendConfig | None = None) -> LioState:
    """Strapdown integration of the bias-corrected IMU readings received after state.timestamp (midpoint rule).

    The pose covariance is carried through the motion increment and inflated by the process noise of the elapsed
    time. An empty list leaves the state unchanged."""
    config = config if config is not None else FrontendConfig()
    samples = [sample for sample in imu if sample.timestamp > state.timestamp]
    propagated = state.copy()
    if not samples:
        return propagated

    rotation = state.pose.rotation
    position = state.pose.translation.copy()
    velocity = state.velocity.copy()
    previous = state.last_imu
    t = state.timestamp
    for sample in samples:
        dt = sample.timestamp - t
        gyro = sample.gyro if previous is None else 0.5 * (previous.gyro + sample.gyro)
        accel_now = sample.accel - state.b_a
        next_rotation = rotation * Rotation.from_rotvec((gyro - state.b_w) * dt)
        if previous is None:
            accel = next_rotation.apply(accel_now) + state.gravity
        else:
            accel = 0.5 * (rotation.apply(previous.accel - state.b_a) + next_rotation.apply(accel_now)) + state.gravity
        position = position + velocity * dt + 0.5 * accel * dt * dt
        velocity = velocity + accel * dt
        rotation = next_rotation
        previous = sample
        t = sample.timestamp

    propagated.pose = Pose(rotation, position)
    propagated.velocity = velocity
    propagated.timestamp = t
    propagated.last_imu = previous

    increment = state.pose.inverse() @ propagated.pose
    increment_rotation_t = increment.rotation.as_matrix().T
    transition = np.zeros((6, 6))
    transition[:3, :3] = increment_rotation_t
    transition[3:, :3] = -increment_rotation_t @ hat(increment.translation)
    transition[3:, 3:] = increment_rotation_t
    cov = transition @ state.cov @ transition.T + config.process_noise(t - state.timestamp)
    propagated.cov = 0.5 * (cov + cov.T)
    return propagated

def register_state(state: LioState, scan: ArrayLike, local_map: LocalMap, config: FrontendConfig | None = None) -> tuple[LioState, RegistrationResult | None]:
    """Fuses a scan into a propagated state. With an empty map the state is returned unchanged and no registration is run."""
    config = config if config is not None else FrontendConfig()
    if local_map.is_empty():
        return state.copy(), None

    result = register(scan, local_map, state.pose, state.cov, config.registration)
    updated = state.copy()
    updated.pose = result.pose
    updated.cov = bound_covariance(result.covariance, config.max_variance)
    return updated, result

def register_scan(state: LioState, scan: ArrayLike, local_map: LocalMap, config: FrontendConfig | None = None) -> tuple[LioState, bool, int]:
    """Registers a scan against the local map. Returns the updated state, the convergence flag and the iteration count."""
    updated, result = register_state(state, scan, local_map, config)
    if result is None:
        return updated, True, 0
    return updated, result.converged, result.iterations

def update_map(local_map: LocalMap, scan: ArrayLike, pose: Pose) -> LocalMap:
    """Inserts a sensor-frame scan into the map at the given pose. Full voxels drop the new points."""
    local_map.insert(pose.transform_points(np.asarray(scan, dtype=np.float64).reshape(-1, 3)))
    return local_map

def bound_covariance(cov: NDArray[np.float64], max_variance: float) -> NDArray[np.float64]:
    """Scales a covariance down so that its largest variance does not exceed max_variance."""
    largest = float(np.max(np.diag(cov)))
    if largest > max_variance:
        return cov * (max_variance / largest)
    return cov

class Frontend:
    """Stateful odometry: owns the state and the local map, and turns frames into OdometryRecord objects."""
    config: FrontendConfig
    state: LioState | None
    local_map: LocalMap
    last_result: RegistrationResult | None
    _crop_center: NDArray[np.float64] | None

    def __init__(self, config: FrontendConfig | None = None, state: LioState | None = None):
        """Stateful odometry: owns the state and the local map, and turns frames into OdometryRecord objects.
            - config (optional): FrontendConfig object.
            - state (optional): LioState object to start from. Without it, initialize or restart must be called first."""
        if config is not None and not isinstance(config, FrontendConfig):
            raise TypeError(f"unsupported parameter type(s) for config: '{type(config).__name__}'")
        self.config = config if config is not None else FrontendConfig()
        self.state = state.copy() if state is not None else None
        self.local_map = LocalMap(self.config.voxel_size, self.config.max_points_per_voxel)
        self.last_result = None
        self._crop_center = None

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(initialized={self.is_initialized()}, map={self.local_map!r})"

    def is_initialized(self) -> bool:
        return self.state is not None

    def initialize(self, samples: list[ImuSample]) -> InitResult:
        """Static initialization from IMU samples recorded at rest: the map frame is the gravity-aligned first body frame."""
        result = static_initialize(samples, self.config.gravity_magnitude)
        pose = Pose(result.world_fix)
        self.restart(LioState.from_init(samples[-1].timestamp, result, pose, self.config.initial_covariance(), velocity=np.zeros(3)))
        self.state.last_imu = samples[-1]
        logger.info(f"static initialization at t={samples[-1].timestamp:.3f}: b_w={np.round(result.b_w, 6).tolist()}")
        return result

    def restart(self, state: LioState) -> None:
        """Starts over from a state with an empty local map. The next scan seeds the map."""
        self.state = state.copy()
        self.local_map = LocalMap(self.config.voxel_size, self.config.max_points_per_voxel)
        self.last_result = None
        self._crop_center = None

    def deactivate(self) -> None:
        self.state = None
        self.last_result = None

    def process(self, imu: list[ImuSample], scan: ArrayLike) -> OdometryRecord:
        """Propagates with the IMU samples of a frame, registers its scan and grows the local map."""
        if self.state is None:
            raise MapLifecycleError("the frontend must be initialized before processing frames.")
        scan = np.asarray(scan, dtype=np.float64).reshape(-1, 3)
        previous = self.state
        predicted = propagate(previous, imu, self.config)
        state, result = register_state(predicted, scan, self.local_map, self.config)

        dt = predicted.timestamp - previous.timestamp
        if result is not None and not result.degenerate and dt > 0.0:
            state.velocity = state.velocity + self.config.velocity_gain * (state.pose.translation - predicted.pose.translation) / dt
        if result is None or not result.degenerate:
            update_map(self.local_map, scan, state.pose)
            self._crop(state.pose.translation)

        self.state = state
        self.last_result = result
        information = result.information if result is not None else np.zeros((6, 6))
        return OdometryRecord(timestamp=state.timestamp, pose=state.pose.copy(), covariance=state.cov.copy(), scan=scan,
                              converged=result.converged if result is not None else True, iterations=result.iterations if result is not None else 0,
                              degenerate=result.degenerate if result is not None else False, information=information)

    def _crop(self, position: NDArray[np.float64]) -> None:
        if self._crop_center is None:
            self._crop_center = position.copy()
        elif np.linalg.norm(position - self._crop_center) > self.config.crop_distance:
            removed = self.local_map.crop(position, self.config.map_radius)
            self._crop_center = position.copy()
            logger.debug(f"local map cropped around {np.round(position, 2).tolist()}: {removed} voxels removed")

    def transform_frame(self, transform: Pose) -> None:
        """Re-expresses the state and the local map in another frame: x <- transform . x."""
        if self.state is None:
            return
        self.state.pose = transform @ self.state.pose
        self.state.velocity = transform.rotation.apply(self.state.velocity)
        self.state.gravity = transform.rotation.apply(self.state.gravity)
        self.local_map = self.local_map.transformed(transform)
        if self._crop_center is not None:
            self._crop_center = transform.transform_points(self._crop_center)

def pose_error(estimate: Pose, truth: Pose) -> tuple[float, float]:
    """Translation (m) and rotation (rad) error between two poses."""
    delta = boxminus(estimate, truth)
    return float(np.linalg.norm(delta[3:])), float(np.linalg.norm(delta[:3]))

def save_odometry(tum_path: str, covariance_path: str, records: list[OdometryRecord]) -> None:
    """Writes the odometry as a TUM file and the 21 upper-triangle covariance entries of every frame as csv."""
    save_tum(tum_path, [record.timestamp for record in records], [record.pose for record in records])
    rows, columns = np.triu_indices(6)
    with open(covariance_path, "w", newline="") as covariance_file:
        writer = csv.writer(covariance_file)
        writer.writerow(COVARIANCE_CSV_HEADER)
        for record in records:
            writer.writerow([f"{record.timestamp:.9g}"] + [f"{value:.9g}" for value in record.covariance[rows, columns]])
