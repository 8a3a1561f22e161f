"""
Over-degeneracy detection module.

The pose covariance is split into its rotation and translation blocks, whose largest eigenvalues are compared to a
major threshold per axis. A persistence counter catches the frames that stay between the minor and the major
thresholds for too long. The smallest singular value of the registration information matrix is kept as a baseline
detector.
"""

from __future__ import annotations
from dataclasses import dataclass, replace
from numpy.typing import ArrayLike, NDArray

from geometry.eigen import sym_eig3

import csv
import logging
import numpy as np

logger = logging.getLogger(__name__)

DIAGNOSTICS_CSV_HEADER = ("t", "lambda_r", "lambda_t", "gamma", "flag")
DETECTOR_MODES = ("ours", "zhang")

NORMAL = "normal"
MINOR = "minor"
OVER = "over"

@dataclass
class DegeneracyConfig:
    """Thresholds on the largest rotation (rad^2) and translation (m^2) covariance eigenvalues.

    The minor thresholds default to a fifth of the major ones. n_kappa is the number of consecutive minor frames
    tolerated before the flag is raised."""
    xi_major_r: float = 0.0006
    xi_major_t: float = 0.005
    xi_minor_r: float | None = None
    xi_minor_t: float | None = None
    n_kappa: int = 10
    require_both_axes: bool = False
    mode: str = "ours"
    zhang_threshold: float = 100.0

    def __post_init__(self):
        if self.xi_minor_r is None:
            self.xi_minor_r = self.xi_major_r / 5.0
        if self.xi_minor_t is None:
            self.xi_minor_t = self.xi_major_t / 5.0
        for minor, major in (("xi_minor_r", "xi_major_r"), ("xi_minor_t", "xi_major_t")):
            if not 0.0 < getattr(self, minor) < getattr(self, major):
                raise ValueError(f"{minor} must lie between zero and {major} ({getattr(self, minor)}, {getattr(self, major)}).")
        if not isinstance(self.n_kappa, int):
            raise TypeError(f"unsupported parameter type(s) for n_kappa: '{type(self.n_kappa).__name__}'")
        if not self.n_kappa >= 1:
            raise ValueError(f"n_kappa must be bigger then zero, not {self.n_kappa}.")
        if self.mode not in DETECTOR_MODES:
            raise ValueError(f"unknown detector mode '{self.mode}', expected one of {DETECTOR_MODES}.")
        if not self.zhang_threshold > 0.0:
            raise ValueError(f"zhang_threshold must be bigger then zero, not {self.zhang_threshold}.")

@dataclass(frozen=True)
class DegeneracyState:
    gamma_lambda: int = 0
    last_flag: str = NORMAL

@dataclass(frozen=True)
class Diagnostics:
    """Per-frame detector output. gamma is the counter value the decision was taken on."""
    timestamp: float
    lambda_r: float
    lambda_t: float
    gamma: int
    flag: bool
    factor: float | None = None

    def to_row(self) -> list:
        return [repr(self.timestamp), repr(self.lambda_r), repr(self.lambda_t), self.gamma, int(self.flag)]

def split_covariance(p: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Rotation and translation diagonal blocks of a 6x6 pose covariance. The cross blocks are discarded."""
    p = np.asarray(p, dtype=np.float64)
    if not p.shape == (6, 6):
        raise ValueError(f"a pose covariance must be 6x6, not {p.shape}.")
    return p[:3, :3].copy(), p[3:, 3:].copy()

def max_eigenvalues(p: ArrayLike) -> tuple[float, float]:
    rotation_block, translation_block = split_covariance(p)
    return float(sym_eig3(rotation_block).eigenvalues[0]), float(sym_eig3(translation_block).eigenvalues[0])

def assess(p: ArrayLike, config: DegeneracyConfig, state: DegeneracyState) -> tuple[int, DegeneracyState, dict]:
    """Flags over-degeneracy from a pose covariance.

    The flag is raised when a largest eigenvalue exceeds its major threshold (both of them with require_both_axes), or
    when the persistence counter exceeds n_kappa. The counter grows on every frame where an axis lies strictly between
    its minor and major thresholds, is reset when both axes are under their minor thresholds and after every raised
    flag. A frame with an axis above major and the other under minor leaves it unchanged."""
    lambda_r, lambda_t = max_eigenvalues(p)
    above_major = (lambda_r > config.xi_major_r, lambda_t > config.xi_major_t)
    above_minor = (lambda_r > config.xi_minor_r, lambda_t > config.xi_minor_t)
    in_band = any(minor and not major for minor, major in zip(above_minor, above_major))
    over = all(above_major) if config.require_both_axes else any(above_major)

    if in_band:
        gamma = state.gamma_lambda + 1
    elif any(above_minor):
        gamma = state.gamma_lambda
    else:
        gamma = 0
    flag = over or gamma > config.n_kappa

    if flag:
        updated = DegeneracyState(0, OVER)
    else:
        updated = DegeneracyState(gamma, MINOR if any(above_minor) else NORMAL)
    return int(flag), updated, {"lambda_r": lambda_r, "lambda_t": lambda_t, "gamma": gamma}

def zhang_degeneracy_factor(information: ArrayLike) -> float:
    """Smallest singular value of the registration information matrix."""
    information = np.asarray(information, dtype=np.float64)
    return float(np.min(np.linalg.svd(information, compute_uv=False)))

class Detector:
    """Runs one of the detectors frame after frame and keeps the diagnostics rows.

    The eigenvalues of the covariance blocks are always recorded, so both modes produce the same diagnostics file."""
    config: DegeneracyConfig
    state: DegeneracyState
    _diagnostics: list[Diagnostics]

    def __init__(self, config: DegeneracyConfig | None = None):
        """Over-degeneracy detector.
            - config (optional): DegeneracyConfig object. Its mode selects the covariance eigenvalue detector ("ours") or the information matrix baseline ("zhang")."""
        if config is not None and not isinstance(config, DegeneracyConfig):
            raise TypeError(f"unsupported parameter type(s) for config: '{type(config).__name__}'")
        self.config = config if config is not None else DegeneracyConfig()
        self.reset()

    def __repr__(self) -> str:
        filtered_attributes = {key: value for key, value in self.__dict__.items() if not key.startswith('_')}
        return f"{self.__class__.__name__}({', '.join(f'{key}={repr(value)}' for key, value in filtered_attributes.items())})"

    def reset(self) -> None:
        self.state = DegeneracyState()
        self._diagnostics = []

    def update(self, timestamp: float, covariance: ArrayLike, information: ArrayLike | None = None) -> bool:
        """Assesses one frame and returns its flag. The baseline mode needs the information matrix and treats a
        frame without one (no registration took place) as degenerate."""
        flag, state, values = assess(covariance, self.config, self.state)
        factor = None
        if self.config.mode == "zhang":
            if information is None:
                flag = True
            else:
                factor = zhang_degeneracy_factor(information)
                flag = factor < self.config.zhang_threshold
            state = replace(state, last_flag=OVER if flag else NORMAL)

        self.state = state
        diagnostics = Diagnostics(float(timestamp), values["lambda_r"], values["lambda_t"], values["gamma"], bool(flag), factor)
        self._diagnostics.append(diagnostics)
        if flag:
            logger.debug(f"over-degeneracy at t={timestamp:.3f}: lambda_r={values['lambda_r']:.3g}, lambda_t={values['lambda_t']:.3g}, gamma={values['gamma']}")
        return bool(flag)

    def get_diagnostics(self) -> list[Diagnostics]:
        return list(self._diagnostics)

    def flagged_times(self) -> list[float]:
        return [diagnostics.timestamp for diagnostics in self._diagnostics if diagnostics.flag]

    def save_diagnostics(self, file_path: str) -> None:
        save_diagnostics(file_path, self._diagnostics)

def save_diagnostics(file_path: str, diagnostics: list[Diagnostics]) -> None:
    with open(file_path, "w", newline="") as diagnostics_file:
        writer = csv.writer(diagnostics_file)
        writer.writerow(DIAGNOSTICS_CSV_HEADER)
        for row in diagnostics:
            writer.writerow(row.to_row())

def load_diagnostics(file_path: str) -> list[Diagnostics]:
    with open(file_path, "r", newline="") as diagnostics_file:
        reader = csv.DictReader(diagnostics_file)
        return [Diagnostics(float(row["t"]), float(row["lambda_r"]), float(row["lambda_t"]), int(row["gamma"]), bool(int(row["flag"])))
                for row in reader]
