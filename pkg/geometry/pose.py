"""
Pose class module. Rigid-body transforms of SE(3) and their tangent-space maps.

Tangent vectors are 6-vectors laid out rotation first, (phi, rho), on the composite manifold SO(3) x R^3.
"""

from __future__ import annotations
from numpy.typing import ArrayLike, NDArray

from geometry.constants import TOLERANCE
from geometry.rotation import Rotation

import numpy as np

Tangent6 = NDArray[np.float64]

class Pose:
    """Defines a rigid-body transform by its rotation and its translation (meters)."""
    rotation: Rotation
    translation: NDArray[np.float64]

    def __init__(self, rotation: Rotation | None = None, translation: ArrayLike = (0.0, 0.0, 0.0)):
        """Defines a rigid-body transform by its rotation and its translation.
            - rotation (optional): Rotation object. The default value is the identity rotation.
            - translation (optional): Iterable of three floating values, in meters."""
        if rotation is None:
            rotation = Rotation()
        if not isinstance(rotation, Rotation):
            raise TypeError(f"unsupported parameter type(s) for rotation: '{type(rotation).__name__}'")
        translation = np.array(translation, dtype=np.float64).reshape(-1)
        if not translation.shape == (3,):
            raise ValueError(f"a translation must have 3 components, not {translation.shape[0]}.")

        self.rotation = rotation
        self.translation = translation

    @classmethod
    def identity(cls) -> Pose:
        return cls()

    @classmethod
    def from_matrix(cls, m: ArrayLike) -> Pose:
        """Creates a pose from a 4x4 homogeneous matrix."""
        m = np.asarray(m, dtype=np.float64)
        return cls(Rotation.from_matrix(m[:3, :3]), m[:3, 3])

    @classmethod
    def from_rotvec(cls, phi: ArrayLike, translation: ArrayLike = (0.0, 0.0, 0.0)) -> Pose:
        return cls(Rotation.from_rotvec(phi), translation)

    def __matmul__(self, other: Pose) -> Pose:
        """Group composition self . other."""
        if not isinstance(other, Pose):
            raise TypeError(f"unsupported operand type(s) for @: '{type(self).__name__}' and '{type(other).__name__}'")
        return Pose(self.rotation * other.rotation, self.translation + self.rotation.apply(other.translation))

    def __eq__(self, other) -> bool:
        if isinstance(other, Pose):
            return self.rotation == other.rotation and bool(np.max(np.abs(self.translation - other.translation)) <= TOLERANCE)
        else:
            return False

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(rotation={self.rotation!r}, translation={self.translation.tolist()!r})"

    def inverse(self) -> Pose:
        inverse_rotation = self.rotation.inverse()
        return Pose(inverse_rotation, -inverse_rotation.apply(self.translation))

    def as_matrix(self) -> NDArray[np.float64]:
        m = np.eye(4)
        m[:3, :3] = self.rotation.as_matrix()
        m[:3, 3] = self.translation
        return m

    def transform_points(self, points: ArrayLike) -> NDArray[np.float64]:
        """Maps a 3-vector or an (N, 3) array from this pose's local frame to its parent frame."""
        return self.rotation.apply(points) + self.translation

    def copy(self) -> Pose:
        return Pose(Rotation(self.rotation.q.copy()), self.translation.copy())

    def is_close(self, other: Pose, translation_tolerance: float, angle_tolerance: float) -> bool:
        """Checks if two poses differ by less than a translation (m) and an angle (rad)."""
        delta = boxminus(self, other)
        return bool(np.linalg.norm(delta[3:]) <= translation_tolerance and np.linalg.norm(delta[:3]) <= angle_tolerance)

def compose(a: Pose, b: Pose) -> Pose:
    """Returns a . b."""
    return a @ b

def boxplus(a: Pose, delta: ArrayLike) -> Pose:
    """Moves a pose along a tangent vector (phi, rho): (R_a Exp(phi), t_a + R_a rho)."""
    delta = np.asarray(delta, dtype=np.float64)
    return Pose(a.rotation * Rotation.from_rotvec(delta[:3]), a.translation + a.rotation.apply(delta[3:]))

def boxminus(a: Pose, b: Pose) -> Tangent6:
    """Returns the tangent vector taking b to a, so that boxplus(b, boxminus(a, b)) = a."""
    inverse_b_rotation = b.rotation.inverse()
    rotation_part = (inverse_b_rotation * a.rotation).as_rotvec()
    translation_part = inverse_b_rotation.apply(a.translation - b.translation)
    return np.concatenate((rotation_part, translation_part))
