"""
Built-in scenario library.

Every scenario starts with a stationary hold. Loop scenarios go once around their circuit, keep going over the start
area for an overlap distance, then back up to the start so that the true start and end poses coincide. World layouts
come from a fixed per-scenario seed, the run seed only drives sensor noise and subsampling.
"""

from numpy.random import Generator, PCG64

from simulation.paths import Path, PathMotion, figure_eight, rounded_rectangle, straight_line
from simulation.scenario import DegeneracyEvent, ImuSpec, LidarSpec, Scenario
from simulation.trajectory import trajectory_from_function
from simulation.world.box import Box
from simulation.world.patch import Patch
from simulation.world.shape import Shape

import math
import numpy as np

SCENARIO_NAMES = ("corridor-loop", "room", "figure-eight", "campus-loop", "disjoint-worlds")

WALL_HEIGHT = 3.0
WALL_THICKNESS = 0.2
SENSOR_HEIGHT = 1.0

def floor() -> Patch:
    return Patch((0.0, 0.0, 0.0), (0.0, 0.0, 1.0))

def wall(x0: float, y0: float, x1: float, y1: float, height: float = WALL_HEIGHT) -> Box:
    """Thin axis-aligned wall between two points of the floor."""
    size_x = max(abs(x1 - x0), WALL_THICKNESS)
    size_y = max(abs(y1 - y0), WALL_THICKNESS)
    return Box((0.5 * (x0 + x1), 0.5 * (y0 + y1), 0.5 * height), (size_x, size_y, height))

def rectangle_walls(half_x: float, half_y: float, height: float = WALL_HEIGHT) -> list[Box]:
    return [wall(-half_x, -half_y, half_x, -half_y, height), wall(half_x, -half_y, half_x, half_y, height),
            wall(-half_x, half_y, half_x, half_y, height), wall(-half_x, -half_y, -half_x, half_y, height)]

def pillars_along(generator: Generator, start: tuple[float, float], end: tuple[float, float], inward: tuple[float, float],
                  spacing: tuple[float, float], depth: tuple[float, float], height: tuple[float, float], margin: float = 1.0) -> list[Box]:
    """Seeded boxes against a straight face from start to end, protruding along the unit vector inward."""
    length = math.dist(start, end)
    if length <= 2.0 * margin:
        return []
    direction = ((end[0] - start[0]) / length, (end[1] - start[1]) / length)
    pillars = []
    position = margin + generator.uniform(0.0, spacing[0])
    while position < length - margin:
        pillar_depth = generator.uniform(*depth)
        pillar_width = generator.uniform(*depth)
        pillar_height = generator.uniform(*height)
        center_x = start[0] + position * direction[0] + 0.5 * pillar_depth * inward[0]
        center_y = start[1] + position * direction[1] + 0.5 * pillar_depth * inward[1]
        size_x = abs(direction[0]) * pillar_width + abs(inward[0]) * pillar_depth
        size_y = abs(direction[1]) * pillar_width + abs(inward[1]) * pillar_depth
        pillars.append(Box((center_x, center_y, 0.5 * pillar_height), (size_x, size_y, pillar_height)))
        position += generator.uniform(*spacing)
    return pillars

def loop_stops(path: Path, overlap: float) -> list[float]:
    return [0.0, path.length + overlap, path.length]

def first_move_time(motion: PathMotion, s: float) -> float:
    """Time at which the first move reaches arc length s."""
    move = motion.moves[0]
    low, high = move.t_start, move.t_end
    for _ in range(60):
        middle = 0.5 * (low + high)
        if move.displacement(middle) < s:
            low = middle
        else:
            high = middle
    return 0.5 * (low + high)

def spread_events(motion: PathMotion, count: int, duration: float, s_first: float, s_last: float,
                  mode: str = "drop", value: float = 15.0) -> list[DegeneracyEvent]:
    """Evenly spaced events on the first move between two arc lengths."""
    if not s_first < s_last:
        raise ValueError(f"the path is too short to hold degeneracy events (between s={s_first:.1f} and s={s_last:.1f}).")
    events = []
    for k in range(count):
        t_start = first_move_time(motion, s_first + (k + 0.5) * (s_last - s_first) / count)
        t_start = round(t_start, 3)
        events.append(DegeneracyEvent(t_start, t_start + duration, mode, value))
    return events

def wall_with_alcoves(generator: Generator, start: tuple[float, float], end: tuple[float, float], outward: tuple[float, float],
                      spacing: tuple[float, float], width: tuple[float, float], depth: tuple[float, float], height: tuple[float, float],
                      margin: float = 3.0, max_depth: float | None = None) -> list[Box]:
    """Seeded axis-aligned wall from start to end broken by openings, each one leading to a closed alcove on the outward side.
    Alcove depths are capped by max_depth and alcove walls get their own heights, so the view through every opening differs."""
    length = math.dist(start, end)
    direction = ((end[0] - start[0]) / length, (end[1] - start[1]) / length)

    def at(s: float, offset: float = 0.0) -> tuple[float, float]:
        return start[0] + s * direction[0] + offset * outward[0], start[1] + s * direction[1] + offset * outward[1]

    boxes = []
    wall_start = 0.0
    position = margin + generator.uniform(0.0, spacing[1])
    while True:
        opening = generator.uniform(*width)
        alcove_depth = generator.uniform(*depth)
        alcove_height = generator.uniform(*height)
        if position + opening > length - margin:
            break
        if max_depth is not None:
            alcove_depth = min(alcove_depth, max_depth)
        boxes.append(wall(*at(wall_start), *at(position)))
        boxes.append(wall(*at(position), *at(position, alcove_depth), alcove_height))
        boxes.append(wall(*at(position + opening), *at(position + opening, alcove_depth), alcove_height))
        boxes.append(wall(*at(position, alcove_depth), *at(position + opening, alcove_depth), alcove_height))
        wall_start = position + opening
        position = wall_start + generator.uniform(*spacing)
    boxes.append(wall(*at(wall_start), *at(length)))
    return boxes

def corridor_loop_world(half_x: float, half_y: float, half_width: float, generator: Generator) -> list[Shape]:
    """Corridor around a closed block. Both sides of the corridor open into alcoves, carved into the block on the inner side."""
    outer_x, outer_y = half_x + half_width, half_y + half_width
    inner_x, inner_y = half_x - half_width, half_y - half_width
    world: list[Shape] = [floor()]
    parameters = {"spacing": (2.0, 7.0), "width": (1.2, 3.0), "height": (1.2, 4.0), "margin": half_width + 1.0}
    outer_faces = [((-outer_x, -outer_y), (outer_x, -outer_y), (0.0, -1.0)), ((outer_x, -outer_y), (outer_x, outer_y), (1.0, 0.0)),
                   ((outer_x, outer_y), (-outer_x, outer_y), (0.0, 1.0)), ((-outer_x, outer_y), (-outer_x, -outer_y), (-1.0, 0.0))]
    for start, end, outward in outer_faces:
        world.extend(wall_with_alcoves(generator, start, end, outward, depth=(1.5, 9.0), **parameters))
    inner_faces = [((-inner_x, -inner_y), (inner_x, -inner_y), (0.0, 1.0), inner_y), ((inner_x, -inner_y), (inner_x, inner_y), (-1.0, 0.0), inner_x),
                   ((inner_x, inner_y), (-inner_x, inner_y), (0.0, -1.0), inner_y), ((-inner_x, inner_y), (-inner_x, -inner_y), (1.0, 0.0), inner_x)]
    for start, end, outward, reach in inner_faces:
        # alcoves facing each other across the block must not meet
        world.extend(wall_with_alcoves(generator, start, end, outward, depth=(1.0, 6.0), max_depth=max(reach - 0.5, 0.5), **parameters))
    return world

def room_world(half_x: float, half_y: float, loop_x: float, loop_y: float, generator: Generator) -> list[Shape]:
    height = 4.0
    world: list[Shape] = [floor(), *rectangle_walls(half_x, half_y, height),
                          Patch((0.0, 0.0, height), (0.0, 0.0, -1.0), (1.0, 0.0, 0.0), (half_x, half_y))]
    # machines inside the loop
    for x in np.linspace(-loop_x + 2.5, loop_x - 2.5, 3):
        for y in np.linspace(-loop_y + 2.0, loop_y - 2.0, 2):
            size = generator.uniform((0.8, 0.8, 0.8), (2.0, 1.5, 3.0))
            world.append(Box((x, y, 0.5 * size[2]), size))
    # shelves against the walls
    faces = [((-half_x, -half_y), (half_x, -half_y), (0.0, 1.0)), ((half_x, -half_y), (half_x, half_y), (-1.0, 0.0)),
             ((half_x, half_y), (-half_x, half_y), (0.0, -1.0)), ((-half_x, half_y), (-half_x, -half_y), (1.0, 0.0))]
    for start, end, inward in faces:
        world.extend(pillars_along(generator, start, end, inward, spacing=(2.0, 4.0), depth=(0.5, 1.2), height=(1.0, 3.5)))
    return world

def scattered_world(path: Path, extent: tuple[float, float], count: int, clearance: float, generator: Generator) -> list[Shape]:
    """Boxes spread in an open area, kept away from the path."""
    samples = np.array([path.point(s) for s in np.linspace(0.0, path.length, 400)])
    world: list[Shape] = [floor(), *rectangle_walls(extent[0], extent[1], 2.0 * WALL_HEIGHT)]
    for _ in range(100 * count):
        if len(world) >= count + 5:
            break
        center = generator.uniform((-extent[0] + 1.0, -extent[1] + 1.0), (extent[0] - 1.0, extent[1] - 1.0))
        size = generator.uniform((0.4, 0.4, 0.5), (2.0, 2.0, 4.0))
        if np.min(np.linalg.norm(samples - center, axis=1)) - 0.5 * np.max(size[:2]) * math.sqrt(2.0) < clearance:
            continue
        world.append(Box((center[0], center[1], 0.5 * size[2]), size))
    return world

def campus_world(half_x: float, half_y: float, generator: Generator) -> list[Shape]:
    world: list[Shape] = [floor()]
    for offset, inward_sign in ((7.0, 1.0), (-7.0, -1.0)):
        box_x, box_y = half_x + offset, half_y + offset
        faces = [((-box_x, -box_y), (box_x, -box_y), (0.0, -inward_sign)), ((box_x, -box_y), (box_x, box_y), (inward_sign, 0.0)),
                 ((box_x, box_y), (-box_x, box_y), (0.0, inward_sign)), ((-box_x, box_y), (-box_x, -box_y), (-inward_sign, 0.0))]
        for start, end, outward in faces:
            world.extend(pillars_along(generator, start, end, outward, spacing=(8.0, 16.0), depth=(5.0, 10.0), height=(4.0, 15.0), margin=8.0))
    # trees along the outer side of the road
    for start, end, inward in [((-half_x - 3.5, -half_y - 3.5), (half_x + 3.5, -half_y - 3.5), (0.0, -1.0)),
                               ((half_x + 3.5, -half_y - 3.5), (half_x + 3.5, half_y + 3.5), (1.0, 0.0)),
                               ((half_x + 3.5, half_y + 3.5), (-half_x - 3.5, half_y + 3.5), (0.0, 1.0)),
                               ((-half_x - 3.5, half_y + 3.5), (-half_x - 3.5, -half_y - 3.5), (-1.0, 0.0))]:
        world.extend(pillars_along(generator, start, end, inward, spacing=(6.0, 12.0), depth=(0.4, 0.6), height=(4.0, 6.0), margin=6.0))
    return world

def disjoint_world(length: float, generator: Generator) -> list[Shape]:
    middle = 0.5 * length
    world: list[Shape] = [floor(),
                          wall(-5.0, -2.5, middle, -2.5), wall(-5.0, 2.5, middle, 2.5), wall(-5.0, -2.5, -5.0, 2.5),
                          wall(middle, -4.5, length + 5.0, -4.5, 2.0 * WALL_HEIGHT), wall(middle, 4.5, length + 5.0, 4.5, 2.0 * WALL_HEIGHT),
                          wall(length + 5.0, -4.5, length + 5.0, 4.5, 2.0 * WALL_HEIGHT),
                          wall(middle, -4.5, middle, -2.5), wall(middle, 2.5, middle, 4.5)]
    # first area: narrow corridor with small pillars
    for y, inward in ((-2.5, (0.0, 1.0)), (2.5, (0.0, -1.0))):
        world.extend(pillars_along(generator, (-5.0, y), (middle, y), inward, spacing=(3.0, 5.0), depth=(0.3, 0.6), height=(0.8, 2.5)))
    # second area: wide hall with large crates, some of them stacked
    for y, inward in ((-4.5, (0.0, 1.0)), (4.5, (0.0, -1.0))):
        world.extend(pillars_along(generator, (middle, y), (length + 5.0, y), inward, spacing=(5.0, 9.0), depth=(1.2, 2.5), height=(3.0, 6.0), margin=2.0))
    for x in np.arange(middle + 6.0, length, 11.0):
        size = generator.uniform((0.6, 0.6, 4.0), (1.0, 1.0, 6.0))
        world.append(Box((x, generator.choice((-2.8, 2.8)), 0.5 * size[2]), size))
    return world

def build_scenario(name: str, events: int = 0, event_duration: float = 3.0, scale: float = 1.0, seed: int = 0,
                   event_mode: str = "drop", event_value: float = 15.0,
                   lidar_spec: LidarSpec | None = None, imu_spec: ImuSpec | None = None) -> Scenario:
    """Builds one of the built-in scenarios.
        - name: one of SCENARIO_NAMES.
        - events (optional): number of over-degeneracy events spread over the run.
        - event_duration (optional): duration of each event, in seconds.
        - scale (optional): factor applied to the size of the circuit, for shorter runs.
        - seed (optional): seed of the run's random draws.
        - event_mode, event_value (optional): degradation applied during the events.
        - lidar_spec, imu_spec (optional): sensor specifications overriding the defaults."""
    if name not in SCENARIO_NAMES:
        raise ValueError(f"unknown scenario '{name}', expected one of {SCENARIO_NAMES}.")
    if not scale > 0.0:
        raise ValueError(f"scale must be bigger then zero, not {scale}.")
    if not int(events) >= 0:
        raise ValueError(f"the number of events must be non-negative, not {events}.")
    generator = Generator(PCG64(sum(name.encode("utf-8"))))

    if name == "corridor-loop":
        half_x, half_y = 15.0 * scale, 10.0 * scale
        path = rounded_rectangle(half_x, half_y, 2.0)
        overlap = min(15.0, 0.2 * path.length)
        motion = PathMotion(path, loop_stops(path, overlap), speed=1.5, height=SENSOR_HEIGHT)
        world = corridor_loop_world(half_x, half_y, 2.0, generator)
        event_span = (overlap + 8.0, path.length - 8.0)
        closed_loop = True
    elif name == "room":
        loop_x, loop_y = 7.0 * scale, 4.0 * scale
        path = rounded_rectangle(loop_x, loop_y, 1.5)
        overlap = min(8.0, 0.25 * path.length)
        motion = PathMotion(path, loop_stops(path, overlap), speed=1.0, height=SENSOR_HEIGHT)
        world = room_world(loop_x + 5.0, loop_y + 4.0, loop_x, loop_y, generator)
        event_span = (overlap + 4.0, path.length - 4.0)
        closed_loop = True
    elif name == "figure-eight":
        radius = 8.0 * scale
        path = figure_eight(radius)
        overlap = min(12.0, 0.2 * path.length)
        motion = PathMotion(path, loop_stops(path, overlap), speed=1.5, height=SENSOR_HEIGHT)
        world = scattered_world(path, (radius + 12.0, 2.0 * radius + 8.0), int(40 * scale) + 10, 1.5, generator)
        event_span = (overlap + 8.0, path.length - 8.0)
        closed_loop = True
    elif name == "campus-loop":
        half_x, half_y = 55.0 * scale, 35.0 * scale
        path = rounded_rectangle(half_x, half_y, 6.0)
        overlap = min(25.0, 0.2 * path.length)
        motion = PathMotion(path, loop_stops(path, overlap), speed=3.0, ramp_time=3.0, height=1.5)
        world = campus_world(half_x, half_y, generator)
        event_span = (overlap + 20.0, path.length - 20.0)
        closed_loop = True
    else:
        length = 120.0 * scale
        path = straight_line(length)
        motion = PathMotion(path, [0.0, length], speed=1.5, height=SENSOR_HEIGHT)
        world = disjoint_world(length, generator)
        event_span = (0.4 * length, 0.6 * length)
        closed_loop = False

    trajectory = trajectory_from_function(motion, 0.0, motion.t_end)
    degeneracy_events = spread_events(motion, int(events), event_duration, *event_span, event_mode, event_value) if events else []
    return Scenario(world=world, trajectory=trajectory, lidar_spec=lidar_spec, imu_spec=imu_spec, events=degeneracy_events,
                    seed=seed, name=name, closed_loop=closed_loop)
