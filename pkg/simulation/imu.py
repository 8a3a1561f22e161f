"""
IMU model module. Synthesizes gyroscope and accelerometer readings from the ground-truth trajectory.
"""

from numpy.random import Generator

from mapping.preintegration import ImuSample
from simulation.scenario import Scenario

import math
import numpy as np

# Grid times closer than this to a boundary are considered on it.
GRID_TOLERANCE = 1e-9

def imu_time(scenario: Scenario, index: int) -> float:
    """Timestamp of the index-th IMU sample of the scenario's global grid."""
    return scenario.trajectory.start_time + index / scenario.imu_spec.rate

def imu_indices(scenario: Scenario, t_prev: float, t_now: float) -> range:
    """Indices of the grid samples in (t_prev, t_now]."""
    rate = scenario.imu_spec.rate
    start = scenario.trajectory.start_time
    first = math.floor((t_prev - start) * rate + GRID_TOLERANCE) + 1
    last = math.floor((t_now - start) * rate + GRID_TOLERANCE)
    return range(max(first, 0), last + 1)

def sample_imu(scenario: Scenario, t: float, gyro_noise=None, accel_noise=None) -> ImuSample:
    """Noiseless reading at time t, plus the given noise vectors when present."""
    spec = scenario.imu_spec
    trajectory = scenario.trajectory
    state = trajectory.interpolate(min(max(t, trajectory.start_time), trajectory.end_time))
    gravity = np.array([0.0, 0.0, -spec.gravity])

    gyro = state.angular_velocity + np.asarray(spec.gyro_bias)
    accel = state.pose.rotation.inverse().apply(state.acceleration - gravity) + np.asarray(spec.accel_bias)
    if gyro_noise is not None:
        gyro = gyro + gyro_noise
    if accel_noise is not None:
        accel = accel + accel_noise
    return ImuSample(float(t), gyro, accel)

def synthesize_imu(scenario: Scenario, t_prev: float, t_now: float, generator: Generator) -> list[ImuSample]:
    """Returns the IMU samples of the global grid with t_prev < timestamp <= t_now."""
    if not t_prev < t_now:
        raise ValueError(f"t_prev must be smaller than t_now ({t_prev} >= {t_now}).")
    return synthesize_imu_indices(scenario, imu_indices(scenario, t_prev, t_now), generator)

def synthesize_imu_indices(scenario: Scenario, indices: range, generator: Generator) -> list[ImuSample]:
    """Returns the IMU samples of the global grid at the given indices. Gyroscope noise is drawn before accelerometer noise."""
    spec = scenario.imu_spec

    gyro_noise = generator.normal(0.0, spec.gyro_noise, size=(len(indices), 3)) if spec.gyro_noise > 0.0 else [None] * len(indices)
    accel_noise = generator.normal(0.0, spec.accel_noise, size=(len(indices), 3)) if spec.accel_noise > 0.0 else [None] * len(indices)
    return [sample_imu(scenario, imu_time(scenario, index), gyro_noise[i], accel_noise[i]) for i, index in enumerate(indices)]
