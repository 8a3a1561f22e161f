"""
Box class module. Inherits from the Shape class.
"""

from numpy.typing import NDArray

from simulation.world.shape import Shape

import numpy as np

class Box(Shape):
    """Creates an axis-aligned box based on its center and its size."""
    size: NDArray[np.float64]

    def __init__(self, center, size):
        """Creates an axis-aligned box based on its center and its size.
            - center: Iterable of three floating values representing the box's center, in meters.
            - size: Iterable of three floating values representing the box's extent along x, y and z, in meters."""
        super().__init__(center)

        size = np.array(size, dtype=np.float64).reshape(-1)
        if not size.shape == (3,):
            raise ValueError(f"Box's size must have 3 components, not {size.shape[0]}.")
        if not np.all(size > 0.0):
            raise ValueError("Box's size must be bigger then zero along every axis.")
        self.size = size

    @property
    def lower(self) -> NDArray[np.float64]:
        return self.center - 0.5 * self.size

    @property
    def upper(self) -> NDArray[np.float64]:
        return self.center + 0.5 * self.size

    def to_dict(self) -> dict:
        return {"type": "box", "center": self.center.tolist(), "size": self.size.tolist()}

    def intersect(self, origins: NDArray[np.float64], directions: NDArray[np.float64]) -> NDArray[np.float64]:
        return intersect_boxes(origins, directions, self.lower[np.newaxis], self.upper[np.newaxis])[:, 0]

    def distance_to_surface(self, points: NDArray[np.float64]) -> NDArray[np.float64]:
        points = np.atleast_2d(points)
        below = self.lower - points
        above = points - self.upper
        outside = np.linalg.norm(np.maximum(np.maximum(below, above), 0.0), axis=1)
        inside = np.min(np.minimum(-below, -above), axis=1)
        return np.where(np.all((below <= 0.0) & (above <= 0.0), axis=1), inside, outside)

    def get_footprint(self) -> NDArray[np.float64]:
        x0, y0, _ = self.lower
        x1, y1, _ = self.upper
        return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])

def intersect_boxes(origins: NDArray[np.float64], directions: NDArray[np.float64], lowers: NDArray[np.float64], uppers: NDArray[np.float64]) -> NDArray[np.float64]:
    """Slab test of N rays against M axis-aligned boxes at once. Returns an (N, M) array of hit distances, inf on a miss.

    A ray starting inside a box hits it where it exits."""
    origins = np.atleast_2d(origins)[:, np.newaxis, :]
    directions = np.atleast_2d(directions)[:, np.newaxis, :]
    lowers = lowers[np.newaxis]
    uppers = uppers[np.newaxis]

    parallel = directions == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        inverse = np.where(parallel, 0.0, 1.0 / np.where(parallel, 1.0, directions))
        t_low = (lowers - origins) * inverse
        t_high = (uppers - origins) * inverse
    t_near = np.minimum(t_low, t_high)
    t_far = np.maximum(t_low, t_high)

    # A ray parallel to a slab either always lies in it or never does.
    inside_slab = (origins >= lowers) & (origins <= uppers)
    t_near = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), t_near)
    t_far = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), t_far)

    t_enter = np.max(t_near, axis=2)
    t_exit = np.min(t_far, axis=2)
    hit = (t_exit >= t_enter) & (t_exit > 0.0)
    distances = np.where(t_enter > 0.0, t_enter, t_exit)
    return np.where(hit, distances, np.inf)
