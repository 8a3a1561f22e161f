"""
Scenario class module.

A scenario is everything the simulator needs to produce a run: the world, the ground-truth trajectory, the sensor
specifications, the over-degeneracy events and the seed. It is stored as json with a versioned schema.
"""

from __future__ import annotations
from dataclasses import asdict, dataclass, field, fields

from simulation.exceptions import ScenarioError
from simulation.trajectory import Trajectory
from simulation.world.box import Box
from simulation.world.patch import Patch
from simulation.world.shape import Shape

import json
import numpy as np

SCHEMA_VERSION = 1

DEGENERACY_MODES = ("drop", "clamp", "occlude")

@dataclass
class LidarSpec:
    """Spinning LiDAR with fixed elevation channels. Angles in degrees, ranges in meters, rate in Hz."""
    channels: int = 8
    elevation_min: float = -15.0
    elevation_max: float = 15.0
    horizontal_resolution: float = 2.0
    max_range: float = 50.0
    min_range: float = 0.3
    rate: float = 10.0
    noise_sigma: float = 0.01

    def __post_init__(self):
        if not int(self.channels) >= 1:
            raise ScenarioError(f"the LiDAR needs at least one channel, not {self.channels}.", "lidar.channels")
        if not self.elevation_min <= self.elevation_max:
            raise ScenarioError("the lowest elevation must not exceed the highest one.", "lidar.elevation_min")
        if not 0.0 < self.horizontal_resolution <= 360.0:
            raise ScenarioError(f"horizontal resolution must lie in (0, 360], not {self.horizontal_resolution}.", "lidar.horizontal_resolution")
        if not 0.0 <= self.min_range < self.max_range:
            raise ScenarioError("ranges must satisfy 0 <= min_range < max_range.", "lidar.max_range")
        if not self.rate > 0.0:
            raise ScenarioError(f"LiDAR rate must be bigger then zero, not {self.rate}.", "lidar.rate")
        if not self.noise_sigma >= 0.0:
            raise ScenarioError(f"LiDAR noise must be non-negative, not {self.noise_sigma}.", "lidar.noise_sigma")
        self.channels = int(self.channels)

    def beam_directions(self) -> np.ndarray:
        """Unit beam directions in the sensor frame, channel-major, as an (channels * azimuths, 3) array."""
        elevations = np.radians(np.linspace(self.elevation_min, self.elevation_max, self.channels))
        azimuths = np.radians(np.arange(0.0, 360.0, self.horizontal_resolution))
        elevation_grid, azimuth_grid = np.meshgrid(elevations, azimuths, indexing="ij")
        return np.stack((np.cos(elevation_grid) * np.cos(azimuth_grid),
                         np.cos(elevation_grid) * np.sin(azimuth_grid),
                         np.sin(elevation_grid)), axis=-1).reshape(-1, 3)

@dataclass
class ImuSpec:
    """IMU rate (Hz), white noise standard deviations per sample, constant biases and gravity magnitude (m/s^2)."""
    rate: float = 200.0
    gyro_noise: float = 0.0
    accel_noise: float = 0.0
    gyro_bias: list[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])
    accel_bias: list[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])
    gravity: float = 9.81

    def __post_init__(self):
        if not self.rate > 0.0:
            raise ScenarioError(f"IMU rate must be bigger then zero, not {self.rate}.", "imu.rate")
        if not (self.gyro_noise >= 0.0 and self.accel_noise >= 0.0):
            raise ScenarioError("IMU noise must be non-negative.", "imu.gyro_noise")
        if not (len(self.gyro_bias) == 3 and len(self.accel_bias) == 3):
            raise ScenarioError("IMU biases must have 3 components.", "imu.gyro_bias")
        if not self.gravity > 0.0:
            raise ScenarioError(f"gravity magnitude must be bigger then zero, not {self.gravity}.", "imu.gravity")
        self.gyro_bias = [float(value) for value in self.gyro_bias]
        self.accel_bias = [float(value) for value in self.accel_bias]

@dataclass
class DegeneracyEvent:
    """Time window (s) during which scans are degraded.

    mode "drop" keeps `value` points chosen uniformly, "clamp" removes points beyond `value` meters and "occlude"
    removes points in an azimuth sector of `value` degrees centered on `azimuth` degrees."""
    t_start: float
    t_end: float
    mode: str = "drop"
    value: float = 15.0
    azimuth: float = 0.0

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ScenarioError(f"an event must start before it ends ({self.t_start} >= {self.t_end}).", "events.t_start")
        if self.mode not in DEGENERACY_MODES:
            raise ScenarioError(f"unknown degeneracy mode '{self.mode}', expected one of {DEGENERACY_MODES}.", "events.mode")
        if not self.value >= 0.0:
            raise ScenarioError(f"an event's value must be non-negative, not {self.value}.", "events.value")

    def is_active(self, t: float) -> bool:
        return self.t_start <= t < self.t_end

class Scenario:
    """Synthetic run description: world, trajectory, sensors, events and seed."""
    name: str
    world: list[Shape]
    trajectory: Trajectory
    lidar_spec: LidarSpec
    imu_spec: ImuSpec
    events: list[DegeneracyEvent]
    seed: int
    closed_loop: bool

    def __init__(self, world: list[Shape], trajectory: Trajectory, lidar_spec: LidarSpec | None = None, imu_spec: ImuSpec | None = None,
                 events: list[DegeneracyEvent] | None = None, seed: int = 0, name: str = "scenario", closed_loop: bool = False):
        """Synthetic run description.
            - world: list of Box and Patch objects.
            - trajectory: Trajectory object giving the ground-truth motion of the sensor.
            - lidar_spec (optional): LidarSpec object. The default specification is used when omitted.
            - imu_spec (optional): ImuSpec object. The default specification is used when omitted.
            - events (optional): list of DegeneracyEvent objects, each within the trajectory's span.
            - seed (optional): 64-bit integer seeding every random draw of the run.
            - name (optional): String naming the scenario.
            - closed_loop (optional): whether the true start and end positions coincide."""
        for shape in world:
            if not isinstance(shape, Shape):
                raise TypeError(f"unsupported parameter type(s) for world: '{type(shape).__name__}'")
        if not isinstance(trajectory, Trajectory):
            raise TypeError(f"unsupported parameter type(s) for trajectory: '{type(trajectory).__name__}'")
        lidar_spec = lidar_spec if lidar_spec is not None else LidarSpec()
        imu_spec = imu_spec if imu_spec is not None else ImuSpec()
        events = sorted(events if events is not None else [], key=lambda event: event.t_start)
        for event in events:
            if not (trajectory.start_time <= event.t_start and event.t_end <= trajectory.end_time):
                raise ScenarioError(f"event [{event.t_start}, {event.t_end}] lies outside of the trajectory's span.", "events")
        ratio = imu_spec.rate / lidar_spec.rate
        if not abs(ratio - round(ratio)) < 1e-9:
            raise ScenarioError(f"the IMU rate must be a multiple of the LiDAR rate ({imu_spec.rate} / {lidar_spec.rate}).", "imu.rate")
        if not 0 <= int(seed) < 2**64:
            raise ScenarioError(f"the seed must be a 64-bit unsigned integer, not {seed}.", "seed")

        self.name = str(name)
        self.world = list(world)
        self.trajectory = trajectory
        self.lidar_spec = lidar_spec
        self.imu_spec = imu_spec
        self.events = events
        self.seed = int(seed)
        self.closed_loop = bool(closed_loop)

    def __eq__(self, other) -> bool:
        if isinstance(other, Scenario):
            return self.to_dict() == other.to_dict()
        else:
            return False

    def __repr__(self) -> str:
        return (f"{self.__class__.__name__}(name={self.name!r}, shapes={len(self.world)}, "
                f"span=[{self.trajectory.start_time}, {self.trajectory.end_time}], events={len(self.events)}, seed={self.seed})")

    @property
    def imu_per_frame(self) -> int:
        return int(round(self.imu_spec.rate / self.lidar_spec.rate))

    def active_event(self, t: float) -> DegeneracyEvent | None:
        for event in self.events:
            if event.is_active(t):
                return event
        return None

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION,
                "name": self.name,
                "seed": self.seed,
                "closed_loop": self.closed_loop,
                "lidar": asdict(self.lidar_spec),
                "imu": asdict(self.imu_spec),
                "world": [shape.to_dict() for shape in self.world],
                "trajectory": self.trajectory.to_dict(),
                "events": [asdict(event) for event in self.events]}

    @classmethod
    def from_dict(cls, data: dict) -> Scenario:
        if not isinstance(data, dict):
            raise ScenarioError(f"a scenario must be a json object, not '{type(data).__name__}'.", "")
        version = data.get("schema_version")
        if not version == SCHEMA_VERSION:
            raise ScenarioError(f"unsupported scenario schema_version {version!r}, expected {SCHEMA_VERSION}.", "schema_version")
        unknown = set(data) - {"schema_version", "name", "seed", "closed_loop", "lidar", "imu", "world", "trajectory", "events"}
        if unknown:
            raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}.", sorted(unknown)[0])
        if "trajectory" not in data:
            raise ScenarioError("a scenario needs a trajectory.", "trajectory")

        return cls(world=[_shape_from_dict(shape) for shape in data.get("world", [])],
                   trajectory=Trajectory.from_dict(data["trajectory"]),
                   lidar_spec=_spec_from_dict(LidarSpec, data.get("lidar", {}), "lidar"),
                   imu_spec=_spec_from_dict(ImuSpec, data.get("imu", {}), "imu"),
                   events=[_spec_from_dict(DegeneracyEvent, event, "events") for event in data.get("events", [])],
                   seed=data.get("seed", 0),
                   name=data.get("name", "scenario"),
                   closed_loop=data.get("closed_loop", False))

def _spec_from_dict(spec_class, data: dict, name: str):
    if not isinstance(data, dict):
        raise ScenarioError(f"'{name}' must be a json object.", name)
    known = {spec_field.name for spec_field in fields(spec_class)}
    unknown = set(data) - known
    if unknown:
        raise ScenarioError(f"unknown keys in '{name}': {sorted(unknown)}.", f"{name}.{sorted(unknown)[0]}")
    try:
        return spec_class(**data)
    except TypeError as error:
        raise ScenarioError(f"invalid '{name}': {error}", name) from error

def _shape_from_dict(data: dict) -> Shape:
    try:
        shape_type = data["type"]
        if shape_type == "box":
            return Box(data["center"], data["size"])
        if shape_type == "patch":
            return Patch(data["center"], data["normal"], data.get("axis"), tuple(data.get("half_extents", (None, None))))
    except (KeyError, TypeError, ValueError) as error:
        raise ScenarioError(f"invalid shape {data!r}: {error}", "world") from error
    raise ScenarioError(f"unknown shape type '{shape_type}'.", "world.type")

def save_scenario(scenario: Scenario, file_path: str) -> None:
    with open(file_path, "w") as scenario_file:
        json.dump(scenario.to_dict(), scenario_file, indent=1)

def load_scenario(file_path: str) -> Scenario:
    try:
        with open(file_path, "r") as scenario_file:
            data = json.load(scenario_file)
    except json.JSONDecodeError as error:
        raise ScenarioError(f"scenario file {file_path} is not valid json: {error}", "") from error
    return Scenario.from_dict(data)
