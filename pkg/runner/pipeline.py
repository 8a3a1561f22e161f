"""
Pipeline module.

Streams frame bundles through the odometry, the over-degeneracy detector and the map database. A flagged frame
hibernates the active map; the frames that follow only feed the re-initialization until a new map can be started.
Keyframes of the active map are looked up among the sleeping maps and fused with them once the similarity streak is
long enough; otherwise they are used for loop closure inside the active map.
"""

from __future__ import annotations
from numpy.typing import NDArray
from tqdm import tqdm
from typing import Iterable

from geometry.pose import Pose
from geometry.tum import save_tum
from mapping.degeneracy import Detector, Diagnostics, save_diagnostics
from mapping.exceptions import (DescriptorError, FusionError, InitializationError, MapLifecycleError, PoseGraphError,
                                PreintegrationError)
from mapping.export import export_database
from mapping.frontend import Frontend, LioState, OdometryRecord, save_odometry
from mapping.initialization import InitReport, InitResult, InitWindowBuilder, static_initialize, try_initialize
from mapping.map_manager import FusionResult, LoopClosure, MapDatabase
from mapping.preintegration import ImuSample
from runner.config import RunConfig, save_config
from runner.exceptions import InsufficientOverlapError, PipelineError
from runner.metrics import MetricsReport, ModuleTimer, evaluate_ate, evaluate_end_to_end, profile_modules, save_metrics, save_profile
from simulation.frame_log import iter_frame_log, read_frame_log_header
from simulation.library import build_scenario
from simulation.scenario import Scenario, load_scenario
from simulation.simulator import FrameBundle, Simulator

import json
import logging
import os

import numpy as np

logger = logging.getLogger(__name__)

MODULE_ERRORS = (PreintegrationError, InitializationError, DescriptorError, PoseGraphError, MapLifecycleError, FusionError)

STARTING = "starting"
TRACKING = "tracking"
REINITIALIZING = "reinitializing"

def load_run_scenario(config: RunConfig) -> Scenario:
    """Scenario of a run: a json scenario file, or a built-in scenario built with the run's events and scale."""
    if config.scenario.endswith(".json"):
        return load_scenario(config.scenario)
    return build_scenario(config.scenario, events=config.events, event_duration=config.event_duration, scale=config.duration_scale,
                          seed=config.seed)

class Pipeline:
    """Multi-map LiDAR-inertial mapping of a frame stream."""
    config: RunConfig
    scenario_name: str
    closed_loop: bool
    frontend: Frontend
    detector: Detector
    database: MapDatabase
    builder: InitWindowBuilder
    phase: str
    records: list[OdometryRecord]
    truth: tuple[list[float], list[Pose]]
    init_reports: list[InitReport]
    fusions: list[FusionResult]
    loops: list[LoopClosure]
    frame_count: int
    _timer: ModuleTimer
    _diagnostics: list[Diagnostics]
    _static_samples: list[ImuSample]

    def __init__(self, config: RunConfig | None = None, scenario_name: str | None = None, closed_loop: bool = True):
        """Multi-map LiDAR-inertial mapping of a frame stream.
            - config (optional): RunConfig object holding the toggles and the module overrides.
            - scenario_name (optional): String written in the metrics. The default value is the configured scenario.
            - closed_loop (optional): whether the true trajectory ends where it starts, which makes the end-to-end distance meaningful."""
        if config is not None and not isinstance(config, RunConfig):
            raise TypeError(f"unsupported parameter type(s) for config: '{type(config).__name__}'")
        self.config = config if config is not None else RunConfig()
        self.scenario_name = scenario_name if scenario_name is not None else os.path.splitext(os.path.basename(self.config.scenario))[0]
        self.closed_loop = bool(closed_loop)
        self.reset()

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(scenario={self.scenario_name!r}, phase={self.phase!r}, frames={self.frame_count}, database={self.database!r})"

    def reset(self) -> None:
        self.frontend = Frontend(self.config.section("frontend"))
        self.detector = Detector(self.config.section("degeneracy"))
        self.database = MapDatabase(self.config.section("map_manager"))
        self.builder = InitWindowBuilder(self.config.section("initialization"))
        self.phase = STARTING
        self.records = []
        self.truth = ([], [])
        self.init_reports = []
        self.fusions = []
        self.loops = []
        self.frame_count = 0
        self._timer = ModuleTimer()
        self._diagnostics = []
        self._static_samples = []

    def run(self, frames: Iterable[FrameBundle], total: int | None = None, progress: bool = False) -> MetricsReport:
        """Processes every frame of a stream and returns the run's metrics.
            - frames: iterable of FrameBundle objects, in time order.
            - total (optional): number of frames, for the progress bar.
            - progress (optional): whether a progress bar is shown."""
        self._timer.start()
        for frame in tqdm(frames, total=total, disable=not progress, unit="frame", desc=self.scenario_name):
            try:
                self.process(frame)
            except MODULE_ERRORS as error:
                raise PipelineError(f"frame {frame.index} (t={frame.timestamp:.3f}): {type(error).__name__}: {error}", frame.index) from error
        self._timer.stop()
        return self.report()

    def process(self, frame: FrameBundle) -> None:
        self.frame_count += 1
        self.truth[0].append(frame.timestamp)
        self.truth[1].append(frame.true_pose)

        if self.phase == STARTING:
            self._static_start(frame)
        elif self.phase == REINITIALIZING:
            self._reinitialize(frame)
        else:
            self._track(frame)

    def _restart(self, frame: FrameBundle, result: InitResult, pose: Pose, velocity: NDArray[np.float64] | None = None) -> None:
        """Starts the odometry and a new active map from an accepted initialization. The frame's scan seeds the local map."""
        with self._timer.measure("frontend"):
            state = LioState.from_init(frame.timestamp, result, pose, self.frontend.config.initial_covariance(), velocity)
            state.last_imu = frame.imu_slice[-1] if frame.imu_slice else None
            self.frontend.restart(state)
            record = self.frontend.process([], frame.scan)
        self.records.append(record)
        with self._timer.measure("map_manager"):
            self.database.try_start_new_map(result, frame.timestamp)
            self.database.maybe_add_keyframe(record.timestamp, record.pose, record.scan, record.covariance)
        self.builder.reset()
        self._static_samples = []
        self.phase = TRACKING

    def _hibernate(self, timestamp: float) -> None:
        self.database.hibernate(timestamp)
        self.frontend.deactivate()
        self._diagnostics.extend(self.detector.get_diagnostics())
        self.detector.reset()
        self.builder.reset()
        self._static_samples = []
        self.phase = REINITIALIZING

    def _reinitialize(self, frame: FrameBundle) -> None:
        """Feeds a frame to the re-initialization. The frame itself is not part of any map."""
        if not self.config.dynamic_init:
            self._static_start(frame)
            return

        with self._timer.measure("dynamic_init"):
            window = self.builder.add(frame.timestamp, frame.imu_slice, frame.scan)
            if window is None:
                return
            report = try_initialize(window, self.config.section("initialization"))
            self.init_reports.append(report)
            if not report.accepted:
                self.builder.slide()
                return
        result = report.result
        self._restart(frame, result, Pose(result.world_fix) @ window.scan_poses[-1])

    def _static_start(self, frame: FrameBundle) -> None:
        """Static initialization once the IMU samples of the last static_init_duration seconds are those of a platform at rest."""
        self._static_samples.extend(frame.imu_slice)
        self._static_samples = [sample for sample in self._static_samples if sample.timestamp > frame.timestamp - self.config.static_init_duration - 1e-9]
        if len(self._static_samples) < 2 or self._static_samples[-1].timestamp - self._static_samples[0].timestamp < self.config.static_init_duration - 1e-9:
            return
        config = self.config.section("initialization")
        try:
            result = static_initialize(self._static_samples, config.gravity_magnitude, config.max_static_gyro, config.max_static_accel_deviation)
        except InitializationError as error:
            if self.phase == STARTING:
                logger.warning(f"static initialization failed at t={frame.timestamp:.3f}: {error}")
            return
        self.init_reports.append(InitReport(timestamp=frame.timestamp, accepted=True, kind="static", b_w=result.b_w.tolist(), gravity=result.gravity.tolist(),
                                            velocity=[0.0, 0.0, 0.0], result=result))
        self._restart(frame, result, Pose(result.world_fix), np.zeros(3))

    def _track(self, frame: FrameBundle) -> None:
        with self._timer.measure("frontend"):
            record = self.frontend.process(frame.imu_slice, frame.scan)
        self.records.append(record)

        with self._timer.measure("detector"):
            flagged = self.detector.update(record.timestamp, record.covariance, record.information)
        if flagged:
            logger.info(f"over-degeneracy flagged at t={record.timestamp:.3f}, hibernating map {self.database.active_id}")
            self._hibernate(record.timestamp)
            return
        if record.degenerate:
            return

        with self._timer.measure("map_manager"):
            keyframe_id = self.database.maybe_add_keyframe(record.timestamp, record.pose, record.scan, record.covariance)
            if keyframe_id is None:
                return
            request = self.database.detect_similarity(keyframe_id) if self.config.fusion else None
        if request is not None:
            with self._timer.measure("fusion_optimization"):
                try:
                    fusion = self.database.fuse(request, record.timestamp)
                except FusionError as error:
                    logger.warning(f"fusion of map {request.sleeping_map} into map {request.active_map} abandoned: {error}")
                else:
                    self.frontend.transform_frame(fusion.correction)
                    self.fusions.append(fusion)
                    return

        with self._timer.measure("map_manager"):
            closure = self.database.detect_loop(keyframe_id)
        if closure is not None:
            self.frontend.transform_frame(closure.correction)
            self.loops.append(closure)

    def get_diagnostics(self) -> list[Diagnostics]:
        return self._diagnostics + self.detector.get_diagnostics()

    def estimated_trajectory(self) -> tuple[list[float], list[Pose]]:
        """Keyframes of every map that was not merged, in time order, followed by the final odometry pose while tracking."""
        keyframes = sorted((record for record in self.database.keyframes.values()
                            if self.database.maps[record.map_id].status != "merged"), key=lambda record: record.timestamp)
        timestamps = [record.timestamp for record in keyframes]
        poses = [record.pose.copy() for record in keyframes]
        if self.phase == TRACKING and self.frontend.state is not None and (not timestamps or self.frontend.state.timestamp > timestamps[-1]):
            timestamps.append(self.frontend.state.timestamp)
            poses.append(self.frontend.state.pose.copy())
        return timestamps, poses

    def report(self) -> MetricsReport:
        estimate = self.estimated_trajectory()
        try:
            ate = evaluate_ate(estimate, self.truth)
        except InsufficientOverlapError as error:
            logger.warning(f"ATE not evaluated: {error}")
            ate = float("nan")
        end_to_end = evaluate_end_to_end(estimate) if self.closed_loop else float("nan")
        return MetricsReport(scenario=self.scenario_name, seed=self.config.seed, fusion=self.config.fusion, enhanced=self.config.enhanced,
                             detector=self.config.detector, frame_count=self.frame_count, keyframe_count=self.database.keyframe_count(),
                             submap_count=self.database.submap_count(), map_count=len(self.database.maps), fusion_count=len(self.fusions),
                             loop_count=len(self.loops), ate_rmse=ate, end_to_end=end_to_end,
                             module_fractions=profile_modules(self._timer.totals, self._timer.total()))

    def save_results(self, run_dir: str, report: MetricsReport | None = None) -> list[str]:
        """Writes the run's result files in a directory and returns their paths."""
        os.makedirs(run_dir, exist_ok=True)
        report = report if report is not None else self.report()
        paths = {name: os.path.join(run_dir, name) for name in ("odometry.tum", "odometry_covariance.csv", "diagnostics.csv", "ground_truth.tum",
                                                                "init_reports.json", "metrics.csv", "profile.csv", "config.json")}
        save_odometry(paths["odometry.tum"], paths["odometry_covariance.csv"], self.records)
        save_diagnostics(paths["diagnostics.csv"], self.get_diagnostics())
        save_tum(paths["ground_truth.tum"], *self.truth)
        with open(paths["init_reports.json"], "w") as report_file:
            json.dump([init_report.to_dict() for init_report in self.init_reports], report_file, indent=1)
        save_metrics(paths["metrics.csv"], [report])
        save_profile(paths["profile.csv"], self._timer.totals, self._timer.total())
        save_config(self.config, paths["config.json"])
        written = list(paths.values()) + export_database(run_dir, self.database)

        if self.config.plot:
            from runner.visualization import save_run_plots
            written += save_run_plots(self, run_dir)
        logger.info(f"results of {self.scenario_name} written to {run_dir}")
        return written

def run_pipeline(config: RunConfig, progress: bool = False, save: bool = True) -> MetricsReport:
    """Simulates the configured scenario, maps it and evaluates the result. The result files go to the run directory."""
    scenario = load_run_scenario(config)
    simulator = Simulator(scenario, config.get_run_name(), config.seed, config.output_dir)
    pipeline = Pipeline(config, scenario.name, scenario.closed_loop)
    frames = simulator.frames() if config.single_threaded else simulator.stream()
    report = pipeline.run(frames, total=simulator.frame_count(), progress=progress)
    if save:
        pipeline.save_results(config.get_run_dir(), report)
        simulator.save_config()
    logger.info(f"{scenario.name}: ATE {report.ate_rmse:.3f} m, end-to-end {report.end_to_end:.3f} m, {report.submap_count} submap(s)")
    return report

def replay_frame_log(config: RunConfig, file_path: str, progress: bool = False, save: bool = True) -> MetricsReport:
    """Maps the frames of a recorded frame log instead of simulating the scenario."""
    with open(file_path, "rb") as log_file:
        header = read_frame_log_header(log_file)
    scenario = header.get("scenario", {})
    pipeline = Pipeline(config, scenario.get("name"), bool(scenario.get("closed_loop", False)))
    report = pipeline.run(iter_frame_log(file_path), progress=progress)
    if save:
        pipeline.save_results(config.get_run_dir(), report)
    return report
