"""
IMU preintegration module.

Integrates the relative position (alpha), velocity (beta) and rotation (gamma) terms between two instants with the
midpoint scheme, in the frame of the first sample. Gravity is not included. The raw samples are kept so the
integration can be replayed exactly with another gyroscope bias.
"""

from __future__ import annotations
from dataclasses import dataclass
from numpy.typing import ArrayLike, NDArray

from geometry.rotation import Rotation, so3_right_jacobian
from mapping.exceptions import EmptyWindowError, TimestampOrderError

import csv
import logging
import numpy as np

logger = logging.getLogger(__name__)

IMU_CSV_HEADER = ("t", "gx", "gy", "gz", "ax", "ay", "az")

@dataclass(frozen=True, eq=False)
class ImuSample:
    """One IMU reading: timestamp (s), gyroscope (rad/s) and accelerometer (m/s^2) in the body frame."""
    timestamp: float
    gyro: NDArray[np.float64]
    accel: NDArray[np.float64]

    @classmethod
    def from_values(cls, timestamp: float, gyro: ArrayLike, accel: ArrayLike) -> ImuSample:
        return cls(float(timestamp), np.array(gyro, dtype=np.float64), np.array(accel, dtype=np.float64))

class Preintegration:
    """Preintegrated IMU terms between the first and the last of a list of samples."""
    alpha: NDArray[np.float64]
    beta: NDArray[np.float64]
    gamma: Rotation
    jac_gamma_bw: NDArray[np.float64]
    dt_total: float
    bias_gyro: NDArray[np.float64]
    bias_accel: NDArray[np.float64]
    _samples: tuple[ImuSample]

    def __init__(self, samples: list[ImuSample], b_w: ArrayLike = (0.0, 0.0, 0.0), b_a: ArrayLike = (0.0, 0.0, 0.0)):
        """Integrates a list of IMU samples with the midpoint scheme.
            - samples: list of ImuSample objects, with strictly increasing timestamps. At least two are needed.
            - b_w (optional): gyroscope bias subtracted from every reading, in rad/s.
            - b_a (optional): accelerometer bias subtracted from every reading, in m/s^2."""
        samples = tuple(samples)
        if len(samples) < 2:
            raise EmptyWindowError(f"preintegration needs at least 2 samples, not {len(samples)}.")
        for previous, current in zip(samples[:-1], samples[1:]):
            if not isinstance(current, ImuSample):
                raise TypeError(f"unsupported parameter type(s) for samples: '{type(current).__name__}'")
            if not current.timestamp > previous.timestamp:
                raise TimestampOrderError(f"IMU timestamps must be strictly increasing ({previous.timestamp} then {current.timestamp}).")

        self.bias_gyro = np.array(b_w, dtype=np.float64)
        self.bias_accel = np.array(b_a, dtype=np.float64)
        self._samples = samples
        self._integrate()

    def _integrate(self) -> None:
        alpha = np.zeros(3)
        beta = np.zeros(3)
        gamma = Rotation()
        jacobian = np.zeros((3, 3))

        for previous, current in zip(self._samples[:-1], self._samples[1:]):
            dt = current.timestamp - previous.timestamp
            omega_dt = (0.5 * (previous.gyro + current.gyro) - self.bias_gyro) * dt
            step = Rotation.from_rotvec(omega_dt)
            next_gamma = gamma * step

            accel = 0.5 * (gamma.apply(previous.accel - self.bias_accel) + next_gamma.apply(current.accel - self.bias_accel))
            alpha = alpha + beta * dt + 0.5 * accel * dt * dt
            beta = beta + accel * dt

            jacobian = step.as_matrix().T @ jacobian - so3_right_jacobian(omega_dt) * dt
            gamma = next_gamma

        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.jac_gamma_bw = jacobian
        self.dt_total = self._samples[-1].timestamp - self._samples[0].timestamp

    def __repr__(self) -> str:
        filtered_attributes = {key: value for key, value in self.__dict__.items() if not key.startswith('_')}
        return f"{self.__class__.__name__}({', '.join(f'{key}={repr(value)}' for key, value in filtered_attributes.items())})"

    @property
    def start_time(self) -> float:
        return self._samples[0].timestamp

    @property
    def end_time(self) -> float:
        return self._samples[-1].timestamp

    def get_samples(self) -> list[ImuSample]:
        return list(self._samples)

    def corrected_gamma(self, new_bw: ArrayLike) -> Rotation:
        """First-order bias correction of gamma: gamma (x) [1, J db/2]."""
        delta = np.asarray(new_bw, dtype=np.float64) - self.bias_gyro
        half = 0.5 * self.jac_gamma_bw @ delta
        return self.gamma * Rotation((1.0, half[0], half[1], half[2]))

    def concatenate(self, other: Preintegration) -> Preintegration:
        """Composes this preintegration with the one that directly follows it. Both must share their boundary sample and biases."""
        if not isinstance(other, Preintegration):
            raise TypeError(f"unsupported parameter type(s) for other: '{type(other).__name__}'")
        if not other.start_time == self.end_time:
            raise TimestampOrderError(f"preintegrations are not consecutive ({self.end_time} then {other.start_time}).")
        if not (np.array_equal(self.bias_gyro, other.bias_gyro) and np.array_equal(self.bias_accel, other.bias_accel)):
            raise ValueError("concatenated preintegrations must share their biases.")

        result = Preintegration.__new__(Preintegration)
        result.alpha = self.alpha + self.beta * other.dt_total + self.gamma.apply(other.alpha)
        result.beta = self.beta + self.gamma.apply(other.beta)
        result.gamma = self.gamma * other.gamma
        result.jac_gamma_bw = other.gamma.as_matrix().T @ self.jac_gamma_bw + other.jac_gamma_bw
        result.dt_total = self.dt_total + other.dt_total
        result.bias_gyro = self.bias_gyro.copy()
        result.bias_accel = self.bias_accel.copy()
        result._samples = self._samples + other._samples[1:]
        return result

def integrate(samples: list[ImuSample], b_w: ArrayLike = (0.0, 0.0, 0.0), b_a: ArrayLike = (0.0, 0.0, 0.0)) -> Preintegration:
    return Preintegration(samples, b_w, b_a)

def repropagate(p: Preintegration, new_bw: ArrayLike, exact: bool = True) -> Preintegration:
    """Returns the preintegration consistent with a new gyroscope bias.

    The exact path replays the retained samples. The fast path only corrects gamma to first order and keeps the
    other terms of p."""
    new_bw = np.array(new_bw, dtype=np.float64)
    if np.array_equal(new_bw, p.bias_gyro):
        return p
    if exact:
        return Preintegration(p.get_samples(), new_bw, p.bias_accel)

    result = Preintegration.__new__(Preintegration)
    result.__dict__.update(p.__dict__)
    result.gamma = p.corrected_gamma(new_bw)
    result.bias_gyro = new_bw
    return result

def samples_between(samples: list[ImuSample], t_start: float, t_end: float) -> list[ImuSample]:
    """Returns the samples with t_start <= timestamp <= t_end."""
    return [sample for sample in samples if t_start <= sample.timestamp <= t_end]

def load_imu_csv(file_path: str) -> list[ImuSample]:
    """Loads "t,gx,gy,gz,ax,ay,az" rows. A header line is optional."""
    samples = []
    with open(file_path, "r", newline="") as imu_file:
        for row in csv.reader(imu_file):
            if not row:
                continue
            try:
                values = [float(value) for value in row]
            except ValueError:
                if samples:
                    raise
                continue
            if not len(values) == 7:
                raise ValueError(f"IMU rows must have 7 columns, not {len(values)}.")
            samples.append(ImuSample.from_values(values[0], values[1:4], values[4:7]))
    logger.debug("loaded %d IMU samples from %s", len(samples), file_path)
    return samples

def save_imu_csv(file_path: str, samples: list[ImuSample]) -> None:
    with open(file_path, "w", newline="") as imu_file:
        writer = csv.writer(imu_file)
        writer.writerow(IMU_CSV_HEADER)
        for sample in samples:
            writer.writerow([repr(sample.timestamp), *(repr(float(value)) for value in sample.gyro), *(repr(float(value)) for value in sample.accel)])
