"""
Patch class module. Inherits from the Shape class.
"""

from numpy.typing import NDArray

from simulation.world.shape import Shape

import numpy as np

PARALLEL_TOLERANCE = 1e-12

class Patch(Shape):
    """Creates a planar rectangle based on its center, its normal and an in-plane axis. Half extents may be infinite."""
    normal: NDArray[np.float64]
    axis: NDArray[np.float64]
    half_extents: tuple[float, float]
    _second_axis: NDArray[np.float64]

    def __init__(self, center, normal, axis=None, half_extents: tuple[float | None, float | None] = (None, None)):
        """Creates a planar rectangle based on its center, its normal and an in-plane axis.
            - center: Iterable of three floating values representing the patch's center, in meters.
            - normal: Iterable of three floating values representing the patch's normal. It is normalized.
            - axis (optional): Iterable of three floating values giving the direction of the first half extent. It is projected on the plane. By default an axis orthogonal to the normal is chosen.
            - half_extents (optional): Half sizes along the axis and along normal x axis, in meters. None stands for an infinite extent."""
        super().__init__(center)

        normal = np.array(normal, dtype=np.float64).reshape(-1)
        if not normal.shape == (3,) or not np.linalg.norm(normal) > 0.0:
            raise ValueError("Patch's normal must be a non-zero 3-vector.")
        normal = normal / np.linalg.norm(normal)

        if axis is None:
            helper = np.array([1.0, 0.0, 0.0]) if abs(normal[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
            axis = np.cross(normal, helper)
        axis = np.array(axis, dtype=np.float64).reshape(-1)
        axis = axis - np.dot(axis, normal) * normal
        if not np.linalg.norm(axis) > 0.0:
            raise ValueError("Patch's axis must not be parallel to its normal.")
        axis = axis / np.linalg.norm(axis)

        extents = []
        for extent in half_extents:
            if extent is None or extent == float("inf"):
                extents.append(float("inf"))
            elif not float(extent) > 0.0:
                raise ValueError("Patch's half extents must be bigger then zero.")
            else:
                extents.append(float(extent))

        self.normal = normal
        self.axis = axis
        self.half_extents = (extents[0], extents[1])
        self._second_axis = np.cross(normal, axis)

    def to_dict(self) -> dict:
        return {"type": "patch", "center": self.center.tolist(), "normal": self.normal.tolist(), "axis": self.axis.tolist(),
                "half_extents": [None if np.isinf(extent) else extent for extent in self.half_extents]}

    def _local(self, points: NDArray[np.float64]) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
        offsets = points - self.center
        return offsets @ self.axis, offsets @ self._second_axis, offsets @ self.normal

    def intersect(self, origins: NDArray[np.float64], directions: NDArray[np.float64]) -> NDArray[np.float64]:
        origins = np.atleast_2d(origins)
        directions = np.atleast_2d(directions)
        denominators = directions @ self.normal
        valid = np.abs(denominators) > PARALLEL_TOLERANCE
        with np.errstate(divide="ignore", invalid="ignore"):
            distances = np.where(valid, ((self.center - origins) @ self.normal) / np.where(valid, denominators, 1.0), np.inf)
        distances = np.where(distances > 0.0, distances, np.inf)

        hits = origins + np.where(np.isfinite(distances), distances, 0.0)[:, np.newaxis] * directions
        u, v, _ = self._local(hits)
        inside = (np.abs(u) <= self.half_extents[0]) & (np.abs(v) <= self.half_extents[1])
        return np.where(inside, distances, np.inf)

    def distance_to_surface(self, points: NDArray[np.float64]) -> NDArray[np.float64]:
        u, v, w = self._local(np.atleast_2d(points))
        outside_u = np.maximum(np.abs(u) - self.half_extents[0], 0.0)
        outside_v = np.maximum(np.abs(v) - self.half_extents[1], 0.0)
        return np.sqrt(w * w + outside_u * outside_u + outside_v * outside_v)

    def get_footprint(self) -> NDArray[np.float64] | None:
        if np.isinf(self.half_extents[0]) or np.isinf(self.half_extents[1]) or abs(self.normal[2]) > 0.9:
            return None
        corners = [self.center + su * self.half_extents[0] * self.axis + sv * self.half_extents[1] * self._second_axis
                   for su, sv in ((1, 1), (1, -1), (-1, -1), (-1, 1))]
        return np.array(corners)[:, :2]
