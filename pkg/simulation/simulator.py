"""
Simulator class module.

Turns a scenario into the ordered stream of frame bundles consumed by the mapping pipeline. The stream is a pure
function of the scenario and the seed: a single random generator is drawn from sequentially, IMU noise first, then
range noise, then degeneracy subsampling, frame after frame.
"""

from __future__ import annotations
from dataclasses import dataclass
from datetime import datetime
from numpy.random import Generator, PCG64
from numpy.typing import NDArray
from typing import Iterator

from geometry.pose import Pose
from geometry.tum import save_tum
from mapping.preintegration import ImuSample
from simulation.imu import imu_time, synthesize_imu_indices
from simulation.lidar import inject_degeneracy, raycast_scan
from simulation.scenario import Scenario, load_scenario, save_scenario

import logging
import os
import queue
import threading

import numpy as np

logger = logging.getLogger(__name__)

RESULT_PATH_DIR = os.path.join("results")

@dataclass(frozen=True, eq=False)
class FrameBundle:
    """One LiDAR frame with its ground truth and the IMU samples received since the previous frame."""
    index: int
    timestamp: float
    true_pose: Pose
    true_velocity: NDArray[np.float64]
    scan: NDArray[np.float64]
    imu_slice: list[ImuSample]
    degenerate: bool = False

class Simulator:
    """Produces the frame bundles of a scenario."""
    scenario: Scenario
    simulation_name: str
    generator_seed: int
    _simulation_dir_: str
    _generator_: Generator
    _frame_index_: int
    _frame_count_: int

    def __init__(self, scenario: Scenario, simulation_name: str | None = None, generator_seed: int | None = None, result_dir: str = RESULT_PATH_DIR):
        """Produces the frame bundles of a scenario.
            - scenario: Scenario object to simulate.
            - simulation_name (optional): String representing the simulation's name in the result repository. The default value is {scenario.name}_{datetime.now().strftime('%d-%m-%Y_%Hh%M')}.
            - generator_seed (optional): Integer overriding the scenario's seed.
            - result_dir (optional): String representing the result repository."""
        if not isinstance(scenario, Scenario):
            raise TypeError(f"unsupported parameter type(s) for scenario: '{type(scenario).__name__}'")

        self.scenario = scenario
        if simulation_name is not None:
            self.simulation_name = str(simulation_name)
        else:
            self.simulation_name = f"{scenario.name}_{datetime.now().strftime('%d-%m-%Y_%Hh%M')}"
        self.generator_seed = int(generator_seed) if generator_seed is not None else scenario.seed

        self._simulation_dir_ = os.path.join(result_dir, self.simulation_name)
        self.reset()

    def __repr__(self) -> str:
        filtered_attributes = {key: value for key, value in self.__dict__.items() if not key.startswith('_')}
        return f"{self.__class__.__name__}({', '.join(f'{key}={repr(value)}' for key, value in filtered_attributes.items())})"

    def reset(self) -> None:
        """Rewinds the stream to its first frame with a fresh generator."""
        self._generator_ = Generator(PCG64(self.generator_seed))
        self._frame_index_ = 0
        trajectory = self.scenario.trajectory
        step = self.scenario.imu_per_frame
        count = 0
        while imu_time(self.scenario, count * step) <= trajectory.end_time + 1e-12:
            count += 1
        self._frame_count_ = count

    def frame_time(self, index: int) -> float:
        return imu_time(self.scenario, index * self.scenario.imu_per_frame)

    def frame_count(self) -> int:
        return self._frame_count_

    def step(self) -> FrameBundle | None:
        """Returns the next frame, or None once the trajectory is over."""
        index = self._frame_index_
        if index >= self._frame_count_:
            return None

        step = self.scenario.imu_per_frame
        imu_range = range(0, 1) if index == 0 else range((index - 1) * step + 1, index * step + 1)
        imu_slice = synthesize_imu_indices(self.scenario, imu_range, self._generator_)

        trajectory = self.scenario.trajectory
        timestamp = self.frame_time(index)
        state = trajectory.interpolate(min(timestamp, trajectory.end_time))
        scan = raycast_scan(self.scenario, state.pose, self._generator_)

        event = self.scenario.active_event(timestamp)
        if event is not None:
            scan = inject_degeneracy(scan, event, self._generator_)

        self._frame_index_ += 1
        return FrameBundle(index=index, timestamp=timestamp, true_pose=state.pose, true_velocity=state.velocity,
                           scan=scan, imu_slice=imu_slice, degenerate=event is not None)

    def frames(self) -> Iterator[FrameBundle]:
        """Iterates over the remaining frames."""
        while True:
            frame = self.step()
            if frame is None:
                return
            yield frame

    def stream(self, queue_size: int = 8) -> Iterator[FrameBundle]:
        """Iterates over the remaining frames, produced ahead of time on a dedicated thread through a bounded queue."""
        frame_queue: queue.Queue = queue.Queue(maxsize=queue_size)
        stop = threading.Event()
        failure: list[BaseException] = []

        def produce():
            try:
                for frame in self.frames():
                    while not stop.is_set():
                        try:
                            frame_queue.put(frame, timeout=0.1)
                            break
                        except queue.Full:
                            continue
                    if stop.is_set():
                        return
            except BaseException as error:
                failure.append(error)
            finally:
                frame_queue.put(None)

        producer = threading.Thread(target=produce, name=f"{self.simulation_name}-producer", daemon=True)
        producer.start()
        try:
            while True:
                frame = frame_queue.get()
                if frame is None:
                    break
                yield frame
        finally:
            stop.set()
            while producer.is_alive():
                try:
                    frame_queue.get(timeout=0.1)
                except queue.Empty:
                    pass
            producer.join()
        if failure:
            raise failure[0]

    def ground_truth(self) -> tuple[list[float], list[Pose]]:
        """Returns the true pose of every frame."""
        timestamps = [self.frame_time(index) for index in range(self._frame_count_)]
        trajectory = self.scenario.trajectory
        return timestamps, [trajectory.pose_at(min(t, trajectory.end_time)) for t in timestamps]

    def save_config(self) -> None:
        """Saves the simulated scenario as a json file."""
        os.makedirs(self._simulation_dir_, exist_ok=True)
        save_scenario(self.scenario, os.path.join(self._simulation_dir_, "scenario.json"))

    def save_ground_truth(self, file_name: str = "ground_truth.tum") -> str:
        """Saves the true frame poses as a TUM trajectory and returns its path."""
        os.makedirs(self._simulation_dir_, exist_ok=True)
        file_path = os.path.join(self._simulation_dir_, file_name)
        save_tum(file_path, *self.ground_truth())
        return file_path

    def get_simulation_dir(self) -> str:
        return self._simulation_dir_

    def get_frame_index(self) -> int:
        return self._frame_index_

def load_simulation(simulation_name: str, result_dir: str = RESULT_PATH_DIR) -> Simulator:
    """Loads a simulation from the result directory by its name."""
    simulation_dir = os.path.join(result_dir, simulation_name)
    if not os.path.exists(simulation_dir):
        raise FileNotFoundError(f"simulation's directory ({simulation_dir}) was not found in the result repository.")

    scenario_file_path = os.path.join(simulation_dir, "scenario.json")
    if not os.path.exists(scenario_file_path):
        raise FileNotFoundError(f"simulation's directory ({simulation_dir}) does not contain a scenario file.")

    return Simulator(load_scenario(scenario_file_path), simulation_name=simulation_name, result_dir=result_dir)
