"""
LocalMap class module.

Uniform voxel hash over world-frame points. Each voxel keeps at most a fixed number of points, the oldest ones, so
re-observing a saturated area leaves the map unchanged. Points live in one contiguous array in insertion order.
Nearest-neighbour queries go through two KD-trees: one over the bulk of the map, rebuilt only once enough points
were added after it, and a small one over the points inserted since.
"""

from __future__ import annotations
from numpy.typing import ArrayLike, NDArray

from geometry.pose import Pose

import numpy as np

from scipy.spatial import cKDTree

VoxelKey = tuple[int, int, int]

class LocalMap:
    """Voxel-capped point map with nearest-neighbour queries."""
    voxel_size: float
    max_points_per_voxel: int
    rebuild_points: int
    _points: NDArray[np.float64]
    _keys: NDArray[np.int64]
    _size: int
    _counts: dict[VoxelKey, int]
    _tree_cache: cKDTree | None
    _indexed: int
    _recent_cache: cKDTree | None

    def __init__(self, voxel_size: float = 0.5, max_points_per_voxel: int = 10, rebuild_points: int = 4096):
        """Voxel-capped point map with nearest-neighbour queries.
            - voxel_size (optional): edge length of the voxels, in meters.
            - max_points_per_voxel (optional): number of points a voxel keeps. Points inserted in a full voxel are dropped.
            - rebuild_points (optional): number of points inserted after the last full KD-tree build that triggers the next
              one (or a quarter of the map, whichever is larger)."""
        if not isinstance(max_points_per_voxel, (int, np.integer)):
            raise TypeError(f"unsupported parameter type(s) for max_points_per_voxel: '{type(max_points_per_voxel).__name__}'")
        if not voxel_size > 0.0:
            raise ValueError("voxel_size must be bigger then zero.")
        if not max_points_per_voxel >= 1:
            raise ValueError("max_points_per_voxel must be bigger then zero.")
        if not rebuild_points >= 1:
            raise ValueError("rebuild_points must be bigger then zero.")

        self.voxel_size = float(voxel_size)
        self.max_points_per_voxel = int(max_points_per_voxel)
        self.rebuild_points = int(rebuild_points)
        self._points = np.empty((0, 3))
        self._keys = np.empty((0, 3), dtype=np.int64)
        self._size = 0
        self._counts = {}
        self._invalidate()

    def __len__(self) -> int:
        return self._size

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(voxel_size={self.voxel_size}, max_points_per_voxel={self.max_points_per_voxel}, voxels={len(self._counts)}, points={len(self)})"

    def is_empty(self) -> bool:
        return self._size == 0

    def voxel_keys(self, points: ArrayLike) -> NDArray[np.int64]:
        return np.floor(np.atleast_2d(points) / self.voxel_size).astype(np.int64)

    def voxel_count(self) -> int:
        return len(self._counts)

    def voxel_points(self, key: VoxelKey) -> NDArray[np.float64]:
        """Points of one voxel, oldest first."""
        inside = np.all(self._keys[:self._size] == np.asarray(key, dtype=np.int64), axis=1)
        return self._points[:self._size][inside].copy()

    def insert(self, points: ArrayLike) -> int:
        """Inserts world-frame points and returns how many were kept. Within a batch, earlier points fill a voxel first."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if not len(points):
            return 0
        keys = self.voxel_keys(points)
        unique_keys, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)

        # rank of every point among the batch points of its voxel, in batch order
        order = np.argsort(inverse, kind="stable")
        sorted_inverse = inverse[order]
        ranks = np.empty(len(points), dtype=np.int64)
        ranks[order] = np.arange(len(points)) - np.searchsorted(sorted_inverse, sorted_inverse, side="left")

        unique_tuples = [tuple(key) for key in unique_keys.tolist()]
        existing = np.array([self._counts.get(key, 0) for key in unique_tuples], dtype=np.int64)
        keep = ranks < (self.max_points_per_voxel - existing)[inverse]
        kept = int(np.count_nonzero(keep))
        if not kept:
            return 0

        added = np.bincount(inverse[keep], minlength=len(unique_keys))
        for key, count, extra in zip(unique_tuples, existing.tolist(), added.tolist()):
            if extra:
                self._counts[key] = count + extra
        self._append(points[keep], keys[keep])
        self._recent_cache = None
        return kept

    def _append(self, points: NDArray[np.float64], keys: NDArray[np.int64]) -> None:
        end = self._size + len(points)
        if end > len(self._points):
            capacity = max(end, 2 * len(self._points), 1024)
            grown_points = np.empty((capacity, 3))
            grown_keys = np.empty((capacity, 3), dtype=np.int64)
            grown_points[:self._size] = self._points[:self._size]
            grown_keys[:self._size] = self._keys[:self._size]
            self._points, self._keys = grown_points, grown_keys
        self._points[self._size:end] = points
        self._keys[self._size:end] = keys
        self._size = end

    def points(self) -> NDArray[np.float64]:
        """Every point of the map, in insertion order. The returned array must not be modified."""
        return self._points[:self._size]

    def _trees(self) -> list[tuple[cKDTree, int]]:
        """KD-trees covering the map with the index offset of their first point."""
        recent = self._size - self._indexed
        if self._tree_cache is None or recent > max(self.rebuild_points, self._indexed // 4):
            self._tree_cache = cKDTree(self._points[:self._size].copy())
            self._indexed = self._size
            self._recent_cache = None
        trees = [(self._tree_cache, 0)]
        if self._indexed < self._size:
            if self._recent_cache is None:
                self._recent_cache = cKDTree(self._points[self._indexed:self._size].copy())
            trees.append((self._recent_cache, self._indexed))
        return trees

    def _invalidate(self) -> None:
        self._tree_cache = None
        self._indexed = 0
        self._recent_cache = None

    def nearest(self, queries: ArrayLike, k: int = 1) -> tuple[NDArray[np.float64], NDArray[np.int64]]:
        """Distances to and indices (in points()) of the k nearest map points of every query. Missing neighbours have an infinite distance."""
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        if self.is_empty():
            return np.full((len(queries), k), np.inf), np.full((len(queries), k), -1, dtype=np.int64)
        all_distances, all_indices = [], []
        for tree, offset in self._trees():
            distances, indices = tree.query(queries, k=k)
            all_distances.append(np.asarray(distances).reshape(len(queries), k))
            all_indices.append(np.asarray(indices).reshape(len(queries), k) + offset)
        distances = np.hstack(all_distances)
        indices = np.hstack(all_indices)
        if len(all_distances) > 1:
            order = np.argsort(distances, axis=1, kind="stable")[:, :k]
            distances = np.take_along_axis(distances, order, axis=1)
            indices = np.take_along_axis(indices, order, axis=1)
        indices = np.where(np.isfinite(distances), indices, -1)
        return distances, indices

    def radius_neighbors(self, query: ArrayLike, radius: float) -> NDArray[np.float64]:
        """Map points within radius of a query point."""
        if self.is_empty():
            return np.empty((0, 3))
        query = np.asarray(query, dtype=np.float64)
        indices = [index + offset for tree, offset in self._trees() for index in tree.query_ball_point(query, radius)]
        return self.points()[sorted(indices)]

    def crop(self, center: ArrayLike, radius: float) -> int:
        """Removes the voxels whose center lies farther than radius from center. Returns the number of removed voxels."""
        center = np.asarray(center, dtype=np.float64)
        keys = self._keys[:self._size]
        far = np.linalg.norm((keys + 0.5) * self.voxel_size - center, axis=1) > radius
        if not np.any(far):
            return 0
        removed = {tuple(key) for key in keys[far].tolist()}
        for key in removed:
            del self._counts[key]
        self._points = self._points[:self._size][~far]
        self._keys = keys[~far]
        self._size = len(self._points)
        self._invalidate()
        return len(removed)

    def transformed(self, pose: Pose) -> LocalMap:
        """New map holding every point moved by a rigid transform, re-voxelized."""
        local_map = LocalMap(self.voxel_size, self.max_points_per_voxel, self.rebuild_points)
        if not self.is_empty():
            local_map.insert(pose.transform_points(self.points()))
        return local_map

    def copy(self) -> LocalMap:
        local_map = LocalMap(self.voxel_size, self.max_points_per_voxel, self.rebuild_points)
        local_map._points = self._points[:self._size].copy()
        local_map._keys = self._keys[:self._size].copy()
        local_map._size = self._size
        local_map._counts = dict(self._counts)
        return local_map

def voxel_downsample(points: ArrayLike, voxel_size: float) -> NDArray[np.float64]:
    """Keeps the centroid of the points falling in each voxel, voxels sorted by key."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if not len(points):
        return points
    keys = np.floor(points / voxel_size).astype(np.int64)
    unique_keys, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    sums = np.zeros((len(unique_keys), 3))
    np.add.at(sums, inverse, points)
    counts = np.bincount(inverse, minlength=len(unique_keys))
    return sums / counts[:, np.newaxis]
