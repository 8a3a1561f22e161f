"""
Rotation class module. Unit quaternions and the SO(3) maps built on them.
"""

from __future__ import annotations
from numpy.typing import ArrayLike, NDArray

from geometry.constants import SMALL_ANGLE, TOLERANCE

import math
import numpy as np

from scipy.spatial.transform import Rotation as ScipyRotation

IDENTITY_3 = np.eye(3)

def hat(w: ArrayLike) -> NDArray[np.float64]:
    """Returns the skew-symmetric matrix of a 3-vector, so that hat(w) @ v = w x v."""
    x, y, z = np.asarray(w, dtype=np.float64)
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]])

def vee(m: ArrayLike) -> NDArray[np.float64]:
    """Inverse of hat for a skew-symmetric matrix."""
    m = np.asarray(m, dtype=np.float64)
    return np.array([m[2, 1], m[0, 2], m[1, 0]])

def so3_exp(phi: ArrayLike) -> NDArray[np.float64]:
    """Rotation matrix of a rotation vector (Rodrigues)."""
    phi = np.asarray(phi, dtype=np.float64)
    theta = float(np.linalg.norm(phi))
    k = hat(phi)
    if theta < SMALL_ANGLE:
        return IDENTITY_3 + k + 0.5 * k @ k
    return IDENTITY_3 + (math.sin(theta) / theta) * k + ((1.0 - math.cos(theta)) / theta**2) * k @ k

def so3_log(m: ArrayLike) -> NDArray[np.float64]:
    """Rotation vector of a rotation matrix, with angle in [0, pi]."""
    return Rotation.from_matrix(m).as_rotvec()

def so3_right_jacobian(phi: ArrayLike) -> NDArray[np.float64]:
    """Right Jacobian of SO(3): Exp(phi + d) ~ Exp(phi) Exp(Jr(phi) d)."""
    phi = np.asarray(phi, dtype=np.float64)
    theta = float(np.linalg.norm(phi))
    k = hat(phi)
    if theta < SMALL_ANGLE:
        return IDENTITY_3 - 0.5 * k + (1.0 / 6.0) * k @ k
    return (IDENTITY_3
            - ((1.0 - math.cos(theta)) / theta**2) * k
            + ((theta - math.sin(theta)) / theta**3) * k @ k)

def so3_right_jacobian_inverse(phi: ArrayLike) -> NDArray[np.float64]:
    """Inverse of the right Jacobian: Log(Exp(phi) Exp(d)) ~ phi + Jr^-1(phi) d."""
    phi = np.asarray(phi, dtype=np.float64)
    theta = float(np.linalg.norm(phi))
    k = hat(phi)
    if theta < SMALL_ANGLE:
        return IDENTITY_3 + 0.5 * k + (1.0 / 12.0) * k @ k
    coefficient = 1.0 / theta**2 - (1.0 + math.cos(theta)) / (2.0 * theta * math.sin(theta))
    return IDENTITY_3 + 0.5 * k + coefficient * k @ k

def quaternion_multiply(p: ArrayLike, q: ArrayLike) -> NDArray[np.float64]:
    """Hamilton product of two (w, x, y, z) quaternions."""
    w1, x1, y1, z1 = p
    w2, x2, y2, z2 = q
    return np.array([w1*w2 - x1*x2 - y1*y2 - z1*z2,
                     w1*x2 + x1*w2 + y1*z2 - z1*y2,
                     w1*y2 - x1*z2 + y1*w2 + z1*x2,
                     w1*z2 + x1*y2 - y1*x2 + z1*w2])

class Rotation:
    """Defines a 3D rotation by its unit quaternion (w, x, y, z), canonicalized with w >= 0."""
    q: NDArray[np.float64]

    def __init__(self, q: ArrayLike = (1.0, 0.0, 0.0, 0.0)):
        """Defines a 3D rotation by its unit quaternion.
            - q: Iterable of four floating values (w, x, y, z). It is normalized and its sign canonicalized so that w >= 0."""
        q = np.array(q, dtype=np.float64).reshape(-1)
        if not q.shape == (4,):
            raise ValueError(f"a quaternion must have 4 components, not {q.shape[0]}.")
        norm = math.sqrt(q[0]*q[0] + q[1]*q[1] + q[2]*q[2] + q[3]*q[3])
        if not norm > 0.0 or not math.isfinite(norm):
            raise ValueError(f"quaternion norm must be finite and bigger then zero, not {norm}.")
        # unit inputs are kept bit-exact so that serialized rotations load back unchanged
        if abs(norm - 1.0) > 1e-15:
            q = q / norm
        if q[0] < 0.0:
            q = -q
        self.q = q

    @classmethod
    def identity(cls) -> Rotation:
        return cls()

    @classmethod
    def from_rotvec(cls, phi: ArrayLike) -> Rotation:
        """Creates the rotation Exp(phi), using a Taylor series for small angles."""
        phi = np.asarray(phi, dtype=np.float64)
        theta = float(np.linalg.norm(phi))
        if theta < SMALL_ANGLE:
            w = 1.0 - theta**2 / 8.0
            scale = 0.5 - theta**2 / 48.0
        else:
            w = math.cos(0.5 * theta)
            scale = math.sin(0.5 * theta) / theta
        return cls((w, scale * phi[0], scale * phi[1], scale * phi[2]))

    @classmethod
    def from_matrix(cls, m: ArrayLike) -> Rotation:
        x, y, z, w = ScipyRotation.from_matrix(np.asarray(m, dtype=np.float64)).as_quat()
        return cls((w, x, y, z))

    @classmethod
    def rotz(cls, angle: float) -> Rotation:
        """Rotation of the given angle (rad) around the z-axis."""
        return cls((math.cos(0.5 * angle), 0.0, 0.0, math.sin(0.5 * angle)))

    def __mul__(self, other: Rotation) -> Rotation:
        """Composition of two rotations."""
        if not isinstance(other, Rotation):
            raise TypeError(f"unsupported operand type(s) for *: '{type(self).__name__}' and '{type(other).__name__}'")
        return Rotation(quaternion_multiply(self.q, other.q))

    def __eq__(self, other) -> bool:
        """Two rotations are equal if their quaternions match up to sign within the geometry tolerance."""
        if isinstance(other, Rotation):
            return min(np.max(np.abs(self.q - other.q)), np.max(np.abs(self.q + other.q))) <= TOLERANCE
        else:
            return False

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(q={self.q.tolist()!r})"

    def inverse(self) -> Rotation:
        w, x, y, z = self.q
        return Rotation((w, -x, -y, -z))

    def as_rotvec(self) -> NDArray[np.float64]:
        """Returns Log(R), the rotation vector with angle in [0, pi]."""
        w, x, y, z = self.q
        v = np.array([x, y, z])
        v_norm = float(np.linalg.norm(v))
        if v_norm < SMALL_ANGLE:
            # theta ~ 2|v|/w with w ~ 1
            return (2.0 / w) * v
        theta = 2.0 * math.atan2(v_norm, w)
        return (theta / v_norm) * v

    def as_matrix(self) -> NDArray[np.float64]:
        w, x, y, z = self.q
        return np.array([[1.0 - 2.0*(y*y + z*z), 2.0*(x*y - w*z), 2.0*(x*z + w*y)],
                         [2.0*(x*y + w*z), 1.0 - 2.0*(x*x + z*z), 2.0*(y*z - w*x)],
                         [2.0*(x*z - w*y), 2.0*(y*z + w*x), 1.0 - 2.0*(x*x + y*y)]])

    def angle(self) -> float:
        """Returns the rotation angle, in radians."""
        return float(np.linalg.norm(self.as_rotvec()))

    def apply(self, vectors: ArrayLike) -> NDArray[np.float64]:
        """Rotates a 3-vector or an (N, 3) array of vectors."""
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim == 1:
            return self.as_matrix() @ vectors
        return vectors @ self.as_matrix().T
