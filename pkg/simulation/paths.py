"""
Planar paths and speed profiles used to build the built-in trajectories.

A path is parametrized by its arc length s. A motion moves a sensor along a path with smooth accelerations, the sensor
heading following the path tangent at a constant height.
"""

from __future__ import annotations

from geometry.pose import Pose
from geometry.rotation import Rotation

import math
import numpy as np

class Segment:
    """Base class for all path segments."""
    length: float

    def point(self, s: float) -> tuple[float, float]:
        raise NotImplementedError("Subclasses must implement this method.")

    def heading(self, s: float) -> float:
        raise NotImplementedError("Subclasses must implement this method.")

class Line(Segment):
    def __init__(self, start: tuple[float, float], heading: float, length: float):
        if not float(length) > 0.0:
            raise ValueError("Line's length must be bigger then zero.")
        self.start = (float(start[0]), float(start[1]))
        self._heading = float(heading)
        self.length = float(length)

    def point(self, s: float) -> tuple[float, float]:
        return (self.start[0] + s * math.cos(self._heading), self.start[1] + s * math.sin(self._heading))

    def heading(self, s: float) -> float:
        return self._heading

class Arc(Segment):
    """Circular arc, counter-clockwise when direction is 1 and clockwise when it is -1."""
    def __init__(self, center: tuple[float, float], radius: float, start_angle: float, sweep: float, direction: int = 1):
        if not float(radius) > 0.0:
            raise ValueError("Arc's radius must be bigger then zero.")
        if direction not in (1, -1):
            raise ValueError(f"Arc's direction must be 1 or -1, not {direction}.")
        self.center = (float(center[0]), float(center[1]))
        self.radius = float(radius)
        self.start_angle = float(start_angle)
        self.direction = direction
        self.length = float(sweep) * self.radius

    def _angle(self, s: float) -> float:
        return self.start_angle + self.direction * s / self.radius

    def point(self, s: float) -> tuple[float, float]:
        angle = self._angle(s)
        return (self.center[0] + self.radius * math.cos(angle), self.center[1] + self.radius * math.sin(angle))

    def heading(self, s: float) -> float:
        return self._angle(s) + self.direction * 0.5 * math.pi

class Path:
    """Chain of tangent-continuous segments. A closed path wraps s around its length."""
    segments: list[Segment]
    closed: bool
    _offsets: np.ndarray

    def __init__(self, segments: list[Segment], closed: bool):
        if not segments:
            raise ValueError("a path needs at least one segment.")
        self.segments = segments
        self.closed = bool(closed)
        self._offsets = np.concatenate(([0.0], np.cumsum([segment.length for segment in segments])))

    @property
    def length(self) -> float:
        return float(self._offsets[-1])

    def _locate(self, s: float) -> tuple[Segment, float]:
        if self.closed:
            s = s % self.length
        else:
            s = min(max(s, 0.0), self.length)
        index = int(np.clip(np.searchsorted(self._offsets, s, side="right") - 1, 0, len(self.segments) - 1))
        return self.segments[index], s - self._offsets[index]

    def point(self, s: float) -> tuple[float, float]:
        segment, local = self._locate(s)
        return segment.point(local)

    def heading(self, s: float) -> float:
        segment, local = self._locate(s)
        return segment.heading(local)

def rounded_rectangle(half_x: float, half_y: float, radius: float) -> Path:
    """Counter-clockwise loop centered on the origin, starting at the middle of its lower side heading +x."""
    if not 0.0 < radius < min(half_x, half_y):
        raise ValueError("the corner radius must be bigger then zero and smaller than both half sizes.")
    straight_x = half_x - radius
    straight_y = half_y - radius
    quarter = 0.5 * math.pi
    return Path([Line((0.0, -half_y), 0.0, straight_x),
                 Arc((straight_x, -straight_y), radius, -quarter, quarter),
                 Line((half_x, -straight_y), quarter, 2.0 * straight_y),
                 Arc((straight_x, straight_y), radius, 0.0, quarter),
                 Line((straight_x, half_y), math.pi, 2.0 * straight_x),
                 Arc((-straight_x, straight_y), radius, quarter, quarter),
                 Line((-half_x, straight_y), -quarter, 2.0 * straight_y),
                 Arc((-straight_x, -straight_y), radius, math.pi, quarter),
                 Line((-straight_x, -half_y), 0.0, straight_x)], closed=True)

def figure_eight(radius: float) -> Path:
    """Two tangent circles through the origin, the first counter-clockwise and the second clockwise."""
    return Path([Arc((0.0, radius), radius, -0.5 * math.pi, 2.0 * math.pi, 1),
                 Arc((0.0, -radius), radius, 0.5 * math.pi, 2.0 * math.pi, -1)], closed=True)

def straight_line(length: float) -> Path:
    return Path([Line((0.0, 0.0), 0.0, length)], closed=False)

class Move:
    """Smooth displacement along a path from s_from to s_to. The speed ramps with a smoothstep, so the acceleration is continuous."""
    def __init__(self, t_start: float, s_from: float, s_to: float, speed: float, ramp_time: float):
        if not speed > 0.0 or not ramp_time > 0.0:
            raise ValueError("a move's speed and ramp time must be bigger then zero.")
        distance = abs(s_to - s_from)
        self.t_start = float(t_start)
        self.s_from = float(s_from)
        self.sign = 1.0 if s_to >= s_from else -1.0
        self.distance = distance
        self.ramp_time = float(ramp_time)
        self.speed = min(float(speed), distance / ramp_time) if distance > 0.0 else 0.0
        cruise = (distance - self.speed * ramp_time) / self.speed if self.speed > 0.0 else 0.0
        self.duration = 2.0 * ramp_time + cruise if distance > 0.0 else 0.0

    @property
    def t_end(self) -> float:
        return self.t_start + self.duration

    def _ramp_distance(self, u: float) -> float:
        return self.speed * self.ramp_time * (u**3 - 0.5 * u**4)

    def displacement(self, t: float) -> float:
        tau = min(max(t - self.t_start, 0.0), self.duration)
        if self.distance == 0.0:
            return self.s_from
        if tau <= self.ramp_time:
            travelled = self._ramp_distance(tau / self.ramp_time)
        elif tau <= self.duration - self.ramp_time:
            travelled = 0.5 * self.speed * self.ramp_time + self.speed * (tau - self.ramp_time)
        else:
            travelled = self.distance - self._ramp_distance((self.duration - tau) / self.ramp_time)
        return self.s_from + self.sign * travelled

class PathMotion:
    """Sequence of moves along a path separated by pauses. Callable as t -> Pose."""
    path: Path
    height: float
    moves: list[Move]
    t_end: float

    def __init__(self, path: Path, stops: list[float], speed: float, ramp_time: float = 2.0, hold: float = 2.0, pause: float = 1.0, height: float = 1.0):
        """Sequence of moves along a path separated by pauses.
            - path: Path object followed by the sensor.
            - stops: arc lengths visited in order, starting with the initial one.
            - speed: cruise speed, in m/s.
            - ramp_time (optional): duration of every acceleration and deceleration phase, in seconds.
            - hold (optional): stationary duration at the start and at the end, in seconds.
            - pause (optional): stationary duration between two moves, in seconds.
            - height (optional): constant sensor height, in meters."""
        self.path = path
        self.height = float(height)
        self.moves = []
        t = float(hold)
        for s_from, s_to in zip(stops[:-1], stops[1:]):
            move = Move(t, s_from, s_to, speed, ramp_time)
            self.moves.append(move)
            t = move.t_end + pause
        self.t_end = (self.moves[-1].t_end if self.moves else t) + hold
        self._s_start = float(stops[0])

    def arc_length(self, t: float) -> float:
        s = self._s_start
        for move in self.moves:
            if t < move.t_start:
                break
            s = move.displacement(t)
        return s

    def __call__(self, t: float) -> Pose:
        s = self.arc_length(t)
        x, y = self.path.point(s)
        return Pose(Rotation.rotz(self.path.heading(s)), (x, y, self.height))
