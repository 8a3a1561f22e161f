"""
Run metrics module.

Absolute trajectory error after a rigid (no scale) Umeyama alignment, end-to-end distance, and the wall-time share of
the pipeline modules. metrics.csv has a fixed, versioned column contract and only holds deterministic values; the
timings go to profile.csv.
"""

from __future__ import annotations
from contextlib import contextmanager
from dataclasses import dataclass, field
from numpy.typing import ArrayLike
from typing import Iterator

from geometry.pose import Pose
from geometry.rotation import Rotation
from runner.exceptions import EvaluationError, InsufficientOverlapError

import bisect
import csv
import logging
import time

import numpy as np

logger = logging.getLogger(__name__)

METRICS_SCHEMA_VERSION = 1
METRICS_CSV_HEADER = ("schema_version", "scenario", "seed", "fusion", "enhanced", "detector", "frame_count", "keyframe_count",
                      "submap_count", "map_count", "fusion_count", "loop_count", "ate_rmse", "end_to_end")
PROFILED_MODULES = ("detector", "dynamic_init", "fusion_optimization", "frontend", "map_manager")
PROFILE_CSV_HEADER = ("module", "seconds", "fraction")
MAX_TIME_DIFFERENCE = 0.05

def associate(estimate_times: list[float], truth_times: list[float], max_difference: float = MAX_TIME_DIFFERENCE) -> list[tuple[int, int]]:
    """Index pairs (estimate, truth) of nearest timestamps no further apart than max_difference. Both lists must be sorted."""
    pairs = []
    for i, t in enumerate(estimate_times):
        k = bisect.bisect_left(truth_times, t)
        neighbors = [j for j in (k - 1, k) if 0 <= j < len(truth_times)]
        if not neighbors:
            continue
        j = min(neighbors, key=lambda index: abs(truth_times[index] - t))
        if abs(truth_times[j] - t) <= max_difference:
            pairs.append((i, j))
    return pairs

def umeyama_alignment(source: ArrayLike, target: ArrayLike) -> Pose:
    """Rigid transform T minimizing sum |target_i - T(source_i)|^2 over (N, 3) point sets."""
    source = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    target = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if not len(source) == len(target):
        raise ValueError(f"point sets must have the same size ({len(source)}, {len(target)}).")
    source_mean, target_mean = source.mean(axis=0), target.mean(axis=0)
    cross = (target - target_mean).T @ (source - source_mean) / len(source)
    u, _, vt = np.linalg.svd(cross)
    sign = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0.0:
        sign[2, 2] = -1.0
    rotation = u @ sign @ vt
    return Pose(Rotation.from_matrix(rotation), target_mean - rotation @ source_mean)

def evaluate_ate(estimate: tuple[list[float], list[Pose]], truth: tuple[list[float], list[Pose]], max_difference: float = MAX_TIME_DIFFERENCE) -> float:
    """Translational RMSE of an estimated trajectory after its rigid alignment onto the ground truth.
        - estimate: (timestamps, poses) of the estimate.
        - truth: (timestamps, poses) of the ground truth.
        - max_difference (optional): Float representing the largest timestamp difference of an associated pair, in seconds.

    Raises InsufficientOverlapError with fewer than 3 associated pairs."""
    estimate_times, estimate_poses = estimate
    truth_times, truth_poses = truth
    if not len(estimate_times) == len(estimate_poses) or not len(truth_times) == len(truth_poses):
        raise EvaluationError("trajectories must have one timestamp per pose.")
    pairs = associate(list(estimate_times), list(truth_times), max_difference)
    if len(pairs) < 3:
        raise InsufficientOverlapError(f"only {len(pairs)} timestamp pairs within {max_difference} s, at least 3 are needed.")

    source = np.array([estimate_poses[i].translation for i, _ in pairs])
    target = np.array([truth_poses[j].translation for _, j in pairs])
    alignment = umeyama_alignment(source, target)
    residuals = target - alignment.transform_points(source)
    rmse = float(np.sqrt(np.mean(np.sum(residuals**2, axis=1))))
    logger.debug(f"ATE over {len(pairs)} pairs: {rmse:.4f} m")
    return rmse

def evaluate_end_to_end(estimate: tuple[list[float], list[Pose]] | list[Pose]) -> float:
    """Distance between the last and the first estimated positions. Zero for an empty trajectory."""
    poses = estimate[1] if isinstance(estimate, tuple) else estimate
    if not poses:
        return 0.0
    return float(np.linalg.norm(poses[-1].translation - poses[0].translation))

@dataclass
class MetricsReport:
    """Outcome of a run. Distances are in meters; NaN marks an ATE that could not be evaluated."""
    scenario: str
    seed: int
    fusion: bool
    enhanced: bool
    detector: str
    frame_count: int
    keyframe_count: int
    submap_count: int
    map_count: int
    fusion_count: int
    loop_count: int
    ate_rmse: float
    end_to_end: float
    module_fractions: dict[str, float] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("frame_count", "keyframe_count", "submap_count", "map_count", "fusion_count", "loop_count", "end_to_end"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, not {getattr(self, name)}.")
        if self.ate_rmse < 0.0:
            raise ValueError(f"ate_rmse must be non-negative, not {self.ate_rmse}.")

    def to_row(self) -> list[str]:
        return [str(METRICS_SCHEMA_VERSION), self.scenario, str(self.seed), str(int(self.fusion)), str(int(self.enhanced)), self.detector,
                str(self.frame_count), str(self.keyframe_count), str(self.submap_count), str(self.map_count), str(self.fusion_count),
                str(self.loop_count), f"{self.ate_rmse:.9g}", f"{self.end_to_end:.9g}"]

    @classmethod
    def from_row(cls, row: dict) -> MetricsReport:
        if not int(row["schema_version"]) == METRICS_SCHEMA_VERSION:
            raise EvaluationError(f"metrics schema version {row['schema_version']} is not supported (expected {METRICS_SCHEMA_VERSION}).")
        return cls(scenario=row["scenario"], seed=int(row["seed"]), fusion=bool(int(row["fusion"])), enhanced=bool(int(row["enhanced"])),
                   detector=row["detector"], frame_count=int(row["frame_count"]), keyframe_count=int(row["keyframe_count"]),
                   submap_count=int(row["submap_count"]), map_count=int(row["map_count"]), fusion_count=int(row["fusion_count"]),
                   loop_count=int(row["loop_count"]), ate_rmse=float(row["ate_rmse"]), end_to_end=float(row["end_to_end"]))

def save_metrics(file_path: str, reports: list[MetricsReport]) -> None:
    with open(file_path, "w", newline="") as metrics_file:
        writer = csv.writer(metrics_file, lineterminator="\n")
        writer.writerow(METRICS_CSV_HEADER)
        for report in reports:
            writer.writerow(report.to_row())

def load_metrics(file_path: str) -> list[MetricsReport]:
    with open(file_path, "r", newline="") as metrics_file:
        reader = csv.DictReader(metrics_file)
        if tuple(reader.fieldnames or ()) != METRICS_CSV_HEADER:
            raise EvaluationError(f"{file_path} does not follow the metrics column contract.")
        return [MetricsReport.from_row(row) for row in reader]

class ModuleTimer:
    """Accumulates wall time per pipeline module. Nested measurements of distinct modules are both counted."""
    totals: dict[str, float]
    _started: float | None
    _stopped: float | None

    def __init__(self, modules: tuple[str, ...] = PROFILED_MODULES):
        self.totals = {module: 0.0 for module in modules}
        self._started = None
        self._stopped = None

    def start(self) -> None:
        self._started = time.perf_counter()
        self._stopped = None

    def stop(self) -> None:
        self._stopped = time.perf_counter()

    @contextmanager
    def measure(self, module: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.totals[module] = self.totals.get(module, 0.0) + time.perf_counter() - start

    def total(self) -> float:
        if self._started is None:
            return sum(self.totals.values())
        end = self._stopped if self._stopped is not None else time.perf_counter()
        return end - self._started

def profile_modules(totals: dict[str, float], total: float) -> dict[str, float]:
    """Share of the total wall time spent in every module. All shares are zero when nothing was timed."""
    if not total > 0.0:
        return {module: 0.0 for module in totals}
    return {module: seconds / total for module, seconds in totals.items()}

def save_profile(file_path: str, totals: dict[str, float], total: float) -> None:
    fractions = profile_modules(totals, total)
    with open(file_path, "w", newline="") as profile_file:
        writer = csv.writer(profile_file, lineterminator="\n")
        writer.writerow(PROFILE_CSV_HEADER)
        for module, seconds in totals.items():
            writer.writerow([module, f"{seconds:.6f}", f"{fractions[module]:.6f}"])
        writer.writerow(["total", f"{total:.6f}", "1.000000"])

def load_profile(file_path: str) -> dict[str, float]:
    """Module fractions of a profile.csv file."""
    with open(file_path, "r", newline="") as profile_file:
        return {row["module"]: float(row["fraction"]) for row in csv.DictReader(profile_file) if row["module"] != "total"}
