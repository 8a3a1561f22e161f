"""
World shape base module.

Shape only fixes the ray-casting interface; worlds are built from its Box and Patch subclasses.
"""

from __future__ import annotations
from numpy.typing import NDArray

import numpy as np

class Shape:
    """Geometry a LiDAR ray can hit."""
    center: NDArray[np.float64]

    def __init__(self, center):
        """Defines a world shape by its center.
            - center: Iterable of three floating values representing the shape's center in the world frame, in meters."""
        center = np.array(center, dtype=np.float64).reshape(-1)
        if not center.shape == (3,):
            raise ValueError(f"a shape's center must have 3 components, not {center.shape[0]}.")
        if not np.all(np.isfinite(center)):
            raise ValueError("a shape's center must be finite.")
        self.center = center

    def __eq__(self, other) -> bool:
        """Checks if two Shape objects are equal."""
        if isinstance(other, self.__class__):
            return self.to_dict() == other.to_dict()
        else:
            return False

    def __repr__(self) -> str:
        """Shape object's representation."""
        return f"{self.__class__.__name__}({', '.join(f'{key}={value!r}' for key, value in self.to_dict().items() if not key == 'type')})"

    def to_dict(self) -> dict:
        """Returns the json-compatible description of the shape."""
        raise NotImplementedError("Subclasses must implement this method.")

    def intersect(self, origins: NDArray[np.float64], directions: NDArray[np.float64]) -> NDArray[np.float64]:
        """Returns, for each ray, the distance along its unit direction to the first hit with t > 0, or inf when it misses."""
        raise NotImplementedError("Subclasses must implement this method.")

    def distance_to_surface(self, points: NDArray[np.float64]) -> NDArray[np.float64]:
        """Returns the distance of each point to the shape's surface."""
        raise NotImplementedError("Subclasses must implement this method.")

    def get_footprint(self) -> NDArray[np.float64] | None:
        """Returns the corners of the shape projected on the xy-plane, or None when it is unbounded or horizontal."""
        raise NotImplementedError("Subclasses must implement this method.")
