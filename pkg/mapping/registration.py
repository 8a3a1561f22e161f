"""
Point-to-plane scan registration module.

A scan is aligned to a local map by iterated Gauss-Newton on point-to-plane residuals, fused with a pose prior
(maximum a posteriori). The posterior covariance of the pose is the inverse of the final normal matrix. Tangent
vectors and covariances are rotation-first, as everywhere in the project.
"""

from __future__ import annotations
from dataclasses import dataclass
from numpy.typing import ArrayLike, NDArray

from geometry.pose import Pose, boxminus, boxplus
from geometry.rotation import so3_right_jacobian_inverse
from mapping.local_map import LocalMap

import logging
import numpy as np

logger = logging.getLogger(__name__)

@dataclass
class RegistrationConfig:
    """Point-to-plane registration parameters. Distances in meters."""
    max_iterations: int = 10
    convergence_threshold: float = 1e-6
    max_correspondence_distance: float = 1.0
    plane_neighbors: int = 5
    plane_tolerance: float = 0.1
    plane_ratio: float = 0.05
    min_correspondences: int = 10
    min_points: int = 50
    measurement_sigma: float = 0.05
    degenerate_inflation: float = 100.0

    def __post_init__(self):
        if not int(self.max_iterations) >= 1:
            raise ValueError(f"max_iterations must be bigger then zero, not {self.max_iterations}.")
        if not int(self.plane_neighbors) >= 3:
            raise ValueError(f"a plane needs at least 3 neighbours, not {self.plane_neighbors}.")
        for name in ("convergence_threshold", "max_correspondence_distance", "plane_tolerance", "plane_ratio", "measurement_sigma"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be bigger then zero, not {getattr(self, name)}.")
        if not self.degenerate_inflation >= 1.0:
            raise ValueError(f"degenerate_inflation must be at least 1, not {self.degenerate_inflation}.")

@dataclass
class Correspondences:
    """Scan points matched to local planes: indices in the scan, unit normals and plane centroids (world frame)."""
    indices: NDArray[np.int64]
    normals: NDArray[np.float64]
    centroids: NDArray[np.float64]

    def __len__(self) -> int:
        return len(self.indices)

@dataclass
class RegistrationResult:
    """Registered pose with its 6x6 posterior covariance and the information brought by the scan alone."""
    pose: Pose
    covariance: NDArray[np.float64]
    information: NDArray[np.float64]
    converged: bool
    iterations: int
    correspondences: int
    fitness: float
    degenerate: bool = False

def find_correspondences(points_world: NDArray[np.float64], local_map: LocalMap, config: RegistrationConfig) -> Correspondences:
    """Fits a plane to the nearest map points of each scan point and keeps the well-defined, close and flat ones."""
    k = config.plane_neighbors
    empty = Correspondences(np.empty(0, dtype=np.int64), np.empty((0, 3)), np.empty((0, 3)))
    if len(points_world) == 0 or len(local_map) < k:
        return empty

    distances, indices = local_map.nearest(points_world, k=k)
    close = np.flatnonzero(distances[:, -1] <= config.max_correspondence_distance)
    if not len(close):
        return empty

    neighbors = local_map.points()[indices[close]]
    centroids = neighbors.mean(axis=1)
    centered = neighbors - centroids[:, np.newaxis, :]
    covariances = np.einsum("mki,mkj->mij", centered, centered) / k
    eigenvalues, eigenvectors = np.linalg.eigh(covariances)
    normals = eigenvectors[:, :, 0]

    deviations = np.abs(np.einsum("mki,mi->mk", centered, normals)).max(axis=1)
    flat = (deviations <= config.plane_tolerance) & (eigenvalues[:, 0] <= config.plane_ratio * eigenvalues[:, 1]) & (eigenvalues[:, 1] > 1e-12)
    return Correspondences(close[flat], normals[flat], centroids[flat])

def point_to_plane_system(scan: NDArray[np.float64], pose: Pose, matches: Correspondences) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Residuals n.(R p + t - c) and their Jacobian with respect to a right perturbation (rotation, translation) of the pose."""
    points = scan[matches.indices]
    residuals = np.einsum("mi,mi->m", matches.normals, pose.transform_points(points) - matches.centroids)
    body_normals = pose.rotation.inverse().apply(matches.normals)
    jacobian = np.hstack((np.cross(points, body_normals), body_normals))
    return residuals, jacobian

def prior_system(pose: Pose, prior: Pose) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Prior residual boxminus(pose, prior) and its Jacobian with respect to a right perturbation of the pose."""
    error = boxminus(pose, prior)
    jacobian = np.zeros((6, 6))
    jacobian[:3, :3] = so3_right_jacobian_inverse(error[:3])
    jacobian[3:, 3:] = (prior.rotation.inverse() * pose.rotation).as_matrix()
    return error, jacobian

def register(scan: ArrayLike, local_map: LocalMap, prior: Pose, prior_covariance: ArrayLike, config: RegistrationConfig | None = None) -> RegistrationResult:
    """Aligns a sensor-frame scan to the local map starting from, and regularized by, a pose prior.
        - scan: (N, 3) points in the sensor frame.
        - local_map: LocalMap object in the world frame.
        - prior: Pose object (world <- sensor) predicted by the IMU.
        - prior_covariance: 6x6 covariance of the prior, rotation first.
        - config (optional): RegistrationConfig object.

    When the scan has fewer than min_points points or fewer than min_correspondences planes can be matched, the prior
    is returned with its covariance inflated and the result is flagged degenerate."""
    config = config if config is not None else RegistrationConfig()
    scan = np.asarray(scan, dtype=np.float64).reshape(-1, 3)
    prior_covariance = np.asarray(prior_covariance, dtype=np.float64)
    prior_information = np.linalg.inv(0.5 * (prior_covariance + prior_covariance.T))
    weight = 1.0 / config.measurement_sigma**2

    def degenerate_result(iterations: int, count: int) -> RegistrationResult:
        logger.warning(f"degenerate registration: {len(scan)} points, {count} plane correspondences.")
        return RegistrationResult(pose=prior.copy(), covariance=prior_covariance * config.degenerate_inflation, information=np.zeros((6, 6)),
                                  converged=False, iterations=iterations, correspondences=count, fitness=float("inf"), degenerate=True)

    if len(scan) < config.min_points:
        return degenerate_result(0, 0)

    pose = prior.copy()
    normal_matrix = prior_information
    information = np.zeros((6, 6))
    residuals = np.empty(0)
    count = 0
    converged = False
    iterations = 0
    for iterations in range(1, config.max_iterations + 1):
        matches = find_correspondences(pose.transform_points(scan), local_map, config)
        count = len(matches)
        if count < config.min_correspondences:
            return degenerate_result(iterations, count)

        residuals, jacobian = point_to_plane_system(scan, pose, matches)
        prior_error, prior_jacobian = prior_system(pose, prior)
        information = weight * jacobian.T @ jacobian
        normal_matrix = prior_jacobian.T @ prior_information @ prior_jacobian + information
        gradient = prior_jacobian.T @ prior_information @ prior_error + weight * jacobian.T @ residuals

        step = -np.linalg.solve(normal_matrix, gradient)
        pose = boxplus(pose, step)
        logger.debug(f"registration iteration {iterations}: {count} planes, mean |r| {np.mean(np.abs(residuals)):.4g} m, step {np.linalg.norm(step):.3g}")
        if np.linalg.norm(step) < config.convergence_threshold:
            converged = True
            break

    covariance = np.linalg.inv(normal_matrix)
    return RegistrationResult(pose=pose, covariance=0.5 * (covariance + covariance.T), information=information, converged=converged,
                              iterations=iterations, correspondences=count, fitness=float(np.mean(np.abs(residuals))))

def register_scans(source: ArrayLike, target: ArrayLike, initial: Pose, config: RegistrationConfig | None = None,
                   voxel_size: float = 0.2, prior_sigma: tuple[float, float] = (1.0, 10.0)) -> RegistrationResult:
    """Scan-to-scan alignment: returns the pose of the source scan in the target scan's frame.
        - source, target: (N, 3) sensor-frame point clouds.
        - initial: initial guess of the relative pose (target <- source).
        - config (optional): RegistrationConfig object.
        - voxel_size (optional): voxel size of the temporary map holding the target, in meters.
        - prior_sigma (optional): loose standard deviations (rad, m) keeping the problem well posed."""
    target_map = LocalMap(voxel_size=voxel_size, max_points_per_voxel=20)
    target_map.insert(target)
    prior_covariance = np.diag([prior_sigma[0]**2] * 3 + [prior_sigma[1]**2] * 3)
    return register(source, target_map, initial, prior_covariance, config)
