"""
State initialization module.

Dynamic initialization recovers the gyroscope bias, the velocities and the gravity vector from a short window of
LiDAR poses (registered scan to scan) and the IMU preintegrations between them, so a new map can be started while
the platform moves. The static initializer is the special case of a platform at rest.

Inside the velocity/gravity solver, velocities are expressed in the body frame of their own instant and gravity is
the specific-force reaction (pointing up, (0, 0, +9.81) for a level window). InitResult stores the physical
gravitational acceleration and velocities in the frame of the first LiDAR pose of the window.
"""

from __future__ import annotations
from collections import deque
from dataclasses import dataclass, field
from numpy.typing import ArrayLike, NDArray

from geometry.pose import Pose
from geometry.rotation import Rotation
from mapping.exceptions import DegenerateExcitationError, InitializationError, InsufficientRotationError, NotStationaryError
from mapping.preintegration import ImuSample, Preintegration, integrate, repropagate
from mapping.registration import RegistrationConfig, register_scans

import logging
import numpy as np

logger = logging.getLogger(__name__)

DOWN = np.array([0.0, 0.0, -1.0])

@dataclass
class InitializationConfig:
    """Dynamic and static initialization parameters."""
    gravity_magnitude: float = 9.81
    window_size: int = 4
    max_condition_number: float = 1e8
    refine_iterations: int = 4
    second_pass_threshold: float = 1e-3
    max_gravity_error: float = 1.0
    max_static_gyro: float = 0.05
    max_static_accel_deviation: float = 0.3
    max_registration_residual: float = 0.1
    extrinsic_translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    registration: RegistrationConfig = field(default_factory=lambda: RegistrationConfig(min_correspondences=30))

    def __post_init__(self):
        if isinstance(self.registration, dict):
            self.registration = RegistrationConfig(**self.registration)
        if not int(self.window_size) >= 4:
            raise ValueError(f"the initialization window needs at least 4 frames, not {self.window_size}.")
        for name in ("gravity_magnitude", "max_condition_number", "max_gravity_error", "max_static_gyro", "max_static_accel_deviation", "max_registration_residual"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be bigger then zero, not {getattr(self, name)}.")
        if not int(self.refine_iterations) >= 1:
            raise ValueError(f"refine_iterations must be bigger then zero, not {self.refine_iterations}.")
        self.extrinsic_translation = tuple(float(value) for value in self.extrinsic_translation)

@dataclass
class InitWindow:
    """LiDAR poses relative to the first frame of the window and the preintegrations between consecutive frames."""
    scan_poses: list[Pose]
    preints: list[Preintegration]
    extrinsic_translation: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))
    timestamps: list[float] | None = None

    def __post_init__(self):
        if not len(self.scan_poses) >= 4:
            raise ValueError(f"an initialization window needs at least 4 poses, not {len(self.scan_poses)}.")
        if not len(self.preints) == len(self.scan_poses) - 1:
            raise ValueError(f"{len(self.scan_poses)} poses need {len(self.scan_poses) - 1} preintegrations, not {len(self.preints)}.")
        self.extrinsic_translation = np.array(self.extrinsic_translation, dtype=np.float64).reshape(3)
        if self.timestamps is None:
            self.timestamps = [self.preints[0].start_time] + [preint.end_time for preint in self.preints]

    def __len__(self) -> int:
        return len(self.scan_poses)

    def with_preints(self, preints: list[Preintegration]) -> InitWindow:
        return InitWindow(self.scan_poses, preints, self.extrinsic_translation, self.timestamps)

@dataclass
class InitResult:
    """Initialized parameters: gyroscope bias (rad/s), per-frame velocities (m/s) and gravity (m/s^2) in the window's
    first LiDAR frame, the rotation taking that frame to the gravity-aligned map frame and the solver's condition number."""
    b_w: NDArray[np.float64]
    velocities: list[NDArray[np.float64]]
    gravity: NDArray[np.float64]
    world_fix: Rotation = field(default_factory=Rotation)
    condition_number: float = 1.0

    def aligned_gravity(self) -> NDArray[np.float64]:
        return self.world_fix.apply(self.gravity)

    def aligned_velocities(self) -> list[NDArray[np.float64]]:
        return [self.world_fix.apply(velocity) for velocity in self.velocities]

@dataclass
class InitReport:
    """Outcome of one initialization attempt."""
    timestamp: float
    accepted: bool
    reason: str = ""
    kind: str = "dynamic"
    b_w: list[float] | None = None
    gravity: list[float] | None = None
    velocity: list[float] | None = None
    bias_condition_number: float | None = None
    condition_number: float | None = None
    passes: int = 0
    result: InitResult | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"timestamp": self.timestamp, "accepted": self.accepted, "reason": self.reason, "kind": self.kind, "b_w": self.b_w,
                "gravity": self.gravity, "velocity": self.velocity, "bias_condition_number": self.bias_condition_number,
                "condition_number": self.condition_number, "passes": self.passes}

def gyro_bias_objective(window: InitWindow, b_w: ArrayLike | None = None) -> float:
    """Sum of squared vector parts of q_{i+1}^-1 q_i gamma_i, with gamma corrected to first order for b_w."""
    total = 0.0
    for first, second, preint in zip(window.scan_poses[:-1], window.scan_poses[1:], window.preints):
        gamma = preint.gamma if b_w is None else preint.corrected_gamma(b_w)
        total += float(np.sum((second.rotation.inverse() * first.rotation * gamma).q[1:]**2))
    return total

def solve_gyro_bias(window: InitWindow, max_condition_number: float = 1e8) -> tuple[NDArray[np.float64], float]:
    """Linearized least squares for the gyroscope bias. Returns the bias and the condition number of the normal matrix.

    Raises InsufficientRotationError when the normal matrix is too ill-conditioned."""
    normal_matrix = np.zeros((3, 3))
    rhs = np.zeros(3)
    for first, second, preint in zip(window.scan_poses[:-1], window.scan_poses[1:], window.preints):
        jacobian = preint.jac_gamma_bw
        residual = (second.rotation.inverse() * first.rotation * preint.gamma).q[1:]
        normal_matrix += jacobian.T @ jacobian
        rhs += jacobian.T @ (-2.0 * residual)

    condition_number = float(np.linalg.cond(normal_matrix))
    if not condition_number <= max_condition_number:
        raise InsufficientRotationError(f"gyroscope bias normal matrix is ill-conditioned ({condition_number:.3g}).", condition_number)
    delta = np.linalg.solve(normal_matrix, rhs)
    return window.preints[0].bias_gyro + delta, condition_number

def _linear_system(window: InitWindow) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Stacked rows z = H x over x = [v_0, ..., v_n-1 (body frames), g (reaction)]."""
    count = len(window)
    extrinsic = window.extrinsic_translation
    rows = np.zeros((6 * (count - 1), 3 * count + 3))
    z = np.zeros(6 * (count - 1))
    for i, (preint, first, second) in enumerate(zip(window.preints, window.scan_poses[:-1], window.scan_poses[1:])):
        dt = preint.dt_total
        to_first = first.rotation.inverse()
        block = rows[6 * i:6 * i + 6]
        block[:3, 3 * i:3 * i + 3] = -np.eye(3) * dt
        block[:3, 3 * count:] = 0.5 * to_first.as_matrix() * dt * dt
        block[3:, 3 * i:3 * i + 3] = -np.eye(3)
        block[3:, 3 * i + 3:3 * i + 6] = (to_first * second.rotation).as_matrix()
        block[3:, 3 * count:] = to_first.as_matrix() * dt
        z[6 * i:6 * i + 3] = preint.alpha - to_first.apply(second.translation - first.translation - second.rotation.apply(extrinsic)) - extrinsic
        z[6 * i + 3:6 * i + 6] = preint.beta
    return rows, z

def _frame_velocities(window: InitWindow, solution: NDArray[np.float64]) -> list[NDArray[np.float64]]:
    return [pose.rotation.apply(solution[3 * i:3 * i + 3]) for i, pose in enumerate(window.scan_poses)]

def solve_velocity_gravity(window: InitWindow, b_w: ArrayLike, max_condition_number: float = 1e8) -> tuple[list[NDArray[np.float64]], NDArray[np.float64], float]:
    """Least squares over the velocities and gravity of the window, after re-propagating the preintegrations with b_w.

    Returns the velocities in the first LiDAR frame, the gravity reaction vector (up) and the condition number of the
    stacked system. Raises DegenerateExcitationError when that condition number exceeds max_condition_number."""
    window = window.with_preints([repropagate(preint, b_w) for preint in window.preints])
    rows, z = _linear_system(window)
    condition_number = float(np.linalg.cond(rows))
    if not condition_number <= max_condition_number:
        raise DegenerateExcitationError(f"velocity and gravity system is ill-conditioned ({condition_number:.3g}).", condition_number)
    solution, *_ = np.linalg.lstsq(rows, z, rcond=None)
    return _frame_velocities(window, solution), solution[-3:].copy(), condition_number

def _tangent_basis(direction: NDArray[np.float64]) -> NDArray[np.float64]:
    helper = np.array([1.0, 0.0, 0.0]) if abs(direction[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    b1 = np.cross(direction, helper)
    b1 /= np.linalg.norm(b1)
    b2 = np.cross(direction, b1)
    return np.column_stack((b1, b2))

def refine_gravity(gravity: ArrayLike, magnitude: float, window: InitWindow, b_w: ArrayLike, velocities: list[NDArray[np.float64]] | None = None,
                   iterations: int = 4) -> tuple[NDArray[np.float64], list[NDArray[np.float64]]]:
    """Re-solves the window with gravity constrained to the given magnitude, perturbed on its 2-dimensional tangent plane.

    Returns the refined gravity reaction vector, of norm exactly magnitude, and the re-solved velocities (first LiDAR frame)."""
    gravity = np.asarray(gravity, dtype=np.float64)
    if not np.linalg.norm(gravity) > 0.0:
        raise ValueError("gravity to refine must not be zero.")
    window = window.with_preints([repropagate(preint, b_w) for preint in window.preints])
    rows, z = _linear_system(window)
    count = len(window)
    gravity_columns = rows[:, 3 * count:]
    solution = None
    direction = gravity / np.linalg.norm(gravity)

    for _ in range(iterations):
        basis = _tangent_basis(direction)
        reduced = np.hstack((rows[:, :3 * count], gravity_columns @ basis))
        rhs = z - gravity_columns @ (magnitude * direction)
        solution, *_ = np.linalg.lstsq(reduced, rhs, rcond=None)
        refined = magnitude * direction + basis @ solution[3 * count:]
        direction = refined / np.linalg.norm(refined)

    return magnitude * direction, _frame_velocities(window, solution)

def gravity_alignment(gravity: ArrayLike) -> Rotation:
    """Minimal rotation taking the direction of gravity to (0, 0, -1). Gravity pointing up is turned about the x axis."""
    direction = np.asarray(gravity, dtype=np.float64)
    direction = direction / np.linalg.norm(direction)
    axis = np.cross(direction, DOWN)
    sine = np.linalg.norm(axis)
    cosine = float(np.dot(direction, DOWN))
    if sine < 1e-12:
        return Rotation() if cosine > 0.0 else Rotation.from_rotvec((np.pi, 0.0, 0.0))
    return Rotation.from_rotvec(axis / sine * np.arctan2(sine, cosine))

def align_world(result: InitResult) -> InitResult:
    """Sets world_fix so that world_fix . gravity = (0, 0, -|g|)."""
    return InitResult(b_w=result.b_w.copy(), velocities=[velocity.copy() for velocity in result.velocities], gravity=result.gravity.copy(),
                      world_fix=gravity_alignment(result.gravity), condition_number=result.condition_number)

def initialize(window: InitWindow, config: InitializationConfig | None = None) -> tuple[InitResult, InitReport]:
    """Gyroscope bias, re-propagation, velocities and gravity, gravity refinement, then world alignment.

    A second pass is run when the bias moved by more than second_pass_threshold during the first one. Raises an
    InitializationError subclass when the window is rejected."""
    config = config if config is not None else InitializationConfig()
    timestamp = window.timestamps[-1]
    b_w = window.preints[0].bias_gyro.copy()
    passes = 0
    bias_condition = 0.0
    while True:
        passes += 1
        current = window.with_preints([repropagate(preint, b_w) for preint in window.preints])
        new_b_w, bias_condition = solve_gyro_bias(current, config.max_condition_number)
        moved = float(np.linalg.norm(new_b_w - b_w))
        b_w = new_b_w
        if moved <= config.second_pass_threshold or passes >= 2:
            break

    velocities, gravity_up, condition_number = solve_velocity_gravity(window, b_w, config.max_condition_number)
    gravity_error = abs(np.linalg.norm(gravity_up) - config.gravity_magnitude)
    if gravity_error > config.max_gravity_error:
        raise InitializationError(f"unrefined gravity norm {np.linalg.norm(gravity_up):.3f} is {gravity_error:.3f} m/s^2 away from {config.gravity_magnitude}.")
    gravity_up, velocities = refine_gravity(gravity_up, config.gravity_magnitude, window, b_w, velocities, config.refine_iterations)

    result = align_world(InitResult(b_w=b_w, velocities=velocities, gravity=-gravity_up, condition_number=condition_number))
    report = InitReport(timestamp=timestamp, accepted=True, b_w=result.b_w.tolist(), gravity=result.gravity.tolist(), velocity=result.velocities[-1].tolist(),
                        bias_condition_number=bias_condition, condition_number=condition_number, passes=passes, result=result)
    logger.info(f"dynamic initialization accepted at t={timestamp:.3f} after {passes} pass(es), condition number {condition_number:.3g}")
    return result, report

def try_initialize(window: InitWindow, config: InitializationConfig | None = None) -> InitReport:
    """Same as initialize, but a rejected window is reported instead of raised."""
    try:
        return initialize(window, config)[1]
    except InitializationError as error:
        logger.warning(f"initialization window rejected at t={window.timestamps[-1]:.3f}: {error}")
        return InitReport(timestamp=window.timestamps[-1], accepted=False, reason=str(error), condition_number=getattr(error, "condition_number", None))

def static_initialize(samples: list[ImuSample], magnitude: float = 9.81, max_gyro: float = 0.05, max_accel_deviation: float = 0.3) -> InitResult:
    """Initialization at rest: the mean gyroscope reading is the bias and the mean accelerometer reading gives gravity.

    Raises NotStationaryError when the readings are not those of a platform at rest."""
    if len(samples) < 2:
        raise InitializationError(f"static initialization needs at least 2 IMU samples, not {len(samples)}.")
    gyro = np.array([sample.gyro for sample in samples])
    accel = np.array([sample.accel for sample in samples])
    mean_gyro = gyro.mean(axis=0)
    mean_accel = accel.mean(axis=0)
    if np.linalg.norm(mean_gyro) > max_gyro or np.max(np.linalg.norm(accel - mean_accel, axis=1)) > max_accel_deviation:
        raise NotStationaryError("IMU readings are not those of a platform at rest.")
    gravity = -magnitude * mean_accel / np.linalg.norm(mean_accel)
    return align_world(InitResult(b_w=mean_gyro, velocities=[np.zeros(3)], gravity=gravity))

@dataclass
class _WindowFrame:
    timestamp: float
    scan: NDArray[np.float64]
    pose: Pose
    preint: Preintegration | None

class InitWindowBuilder:
    """Collects consecutive frames into initialization windows. Consecutive scans are registered to each other;
    the IMU samples between two frames are preintegrated with a zero bias."""
    config: InitializationConfig
    _frames: deque
    _last_sample: ImuSample | None
    _last_motion: Pose

    def __init__(self, config: InitializationConfig | None = None):
        self.config = config if config is not None else InitializationConfig()
        self._frames = deque()
        self._last_sample = None
        self._last_motion = Pose()

    def __len__(self) -> int:
        return len(self._frames)

    def reset(self) -> None:
        self._frames.clear()
        self._last_motion = Pose()

    def add(self, timestamp: float, imu: list[ImuSample], scan: ArrayLike) -> InitWindow | None:
        """Adds a frame and returns a window once enough frames are collected. A frame whose scan cannot be registered
        to the previous one restarts the collection."""
        scan = np.asarray(scan, dtype=np.float64).reshape(-1, 3)
        samples = ([self._last_sample] if self._last_sample is not None else []) + [sample for sample in imu if self._last_sample is None or sample.timestamp > self._last_sample.timestamp]
        if samples:
            self._last_sample = samples[-1]

        if not self._frames:
            self._frames.append(_WindowFrame(timestamp, scan, Pose(), None))
            return None
        if len(samples) < 2:
            self.reset()
            self._frames.append(_WindowFrame(timestamp, scan, Pose(), None))
            return None

        preint = integrate(samples)
        previous = self._frames[-1]
        guess = Pose(preint.gamma, self._last_motion.translation)
        registration = register_scans(scan, previous.scan, guess, self.config.registration)
        if registration.degenerate or registration.fitness > self.config.max_registration_residual:
            logger.debug(f"initialization window restarted at t={timestamp:.3f}: scan-to-scan registration failed.")
            self.reset()
            self._frames.append(_WindowFrame(timestamp, scan, Pose(), None))
            return None

        self._last_motion = registration.pose
        self._frames.append(_WindowFrame(timestamp, scan, previous.pose @ registration.pose, preint))
        while len(self._frames) > self.config.window_size:
            self._frames.popleft()
        if len(self._frames) < self.config.window_size:
            return None
        return self.window()

    def window(self) -> InitWindow:
        frames = list(self._frames)
        origin = frames[0].pose.inverse()
        return InitWindow(scan_poses=[origin @ frame.pose for frame in frames], preints=[frame.preint for frame in frames[1:]],
                          extrinsic_translation=self.config.extrinsic_translation, timestamps=[frame.timestamp for frame in frames])

    def slide(self) -> None:
        """Drops the oldest frame after a rejected window."""
        if self._frames:
            self._frames.popleft()

    def last_scan(self) -> NDArray[np.float64] | None:
        return self._frames[-1].scan if self._frames else None
