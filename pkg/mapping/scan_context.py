"""
Scan Context place recognition module.

A scan is summarized by the maximum point height over a polar grid of range rings and azimuth sectors. Retrieval
first shortlists the entries with the closest ring keys, a rotation invariant summary, then ranks them by the
column-shift cosine distance, whose best shift also gives the relative yaw. Similarity detection between two maps
additionally requires a streak of consecutive hits on the same sleeping map.
"""

from __future__ import annotations
from dataclasses import dataclass, field
from numpy.typing import ArrayLike, NDArray

from geometry.pose import Pose
from mapping.exceptions import DescriptorError

import csv
import logging
import numpy as np
import threading

logger = logging.getLogger(__name__)

@dataclass
class ScanContextConfig:
    """Descriptor grid, retrieval and temporal consistency parameters."""
    rings: int = 20
    sectors: int = 60
    max_radius: float = 80.0
    height_offset: float = 2.0
    candidates: int = 10
    score_threshold: float = 0.13
    consistency_threshold: int = 3
    exclude_recent: int = 30

    def __post_init__(self):
        for name in ("rings", "sectors", "candidates"):
            if not isinstance(getattr(self, name), int):
                raise TypeError(f"unsupported parameter type(s) for {name}: '{type(getattr(self, name)).__name__}'")
            if not getattr(self, name) >= 1:
                raise ValueError(f"{name} must be bigger then zero, not {getattr(self, name)}.")
        if not self.max_radius > 0.0:
            raise ValueError(f"max_radius must be bigger then zero, not {self.max_radius}.")
        if not 0.0 < self.score_threshold <= 2.0:
            raise ValueError(f"score_threshold must lie in (0, 2], not {self.score_threshold}.")
        if not int(self.consistency_threshold) >= 0 or not int(self.exclude_recent) >= 0:
            raise ValueError("consistency_threshold and exclude_recent must be non-negative.")

    @property
    def sector_width(self) -> float:
        return 2.0 * np.pi / self.sectors

@dataclass(frozen=True, eq=False)
class ScDescriptor:
    """rings x sectors maximum heights (-inf for empty bins) and the per-ring fraction of occupied sectors."""
    matrix: NDArray[np.float64]
    ring_key: NDArray[np.float64]

    def __eq__(self, other) -> bool:
        if isinstance(other, ScDescriptor):
            return np.array_equal(self.matrix, other.matrix) and np.array_equal(self.ring_key, other.ring_key)
        return False

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def is_empty(self) -> bool:
        return not np.any(np.isfinite(self.matrix))

    def dense(self) -> NDArray[np.float64]:
        """Matrix with empty bins set to zero."""
        return np.where(np.isfinite(self.matrix), self.matrix, 0.0)

def make_descriptor(cloud: ArrayLike, config: ScanContextConfig | None = None) -> ScDescriptor:
    """Descriptor of a sensor-frame point cloud. Points beyond max_radius are ignored."""
    config = config if config is not None else ScanContextConfig()
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    matrix = np.full((config.rings, config.sectors), -np.inf)

    ranges = np.hypot(cloud[:, 0], cloud[:, 1])
    inside = ranges < config.max_radius
    cloud, ranges = cloud[inside], ranges[inside]
    if len(cloud):
        azimuths = np.mod(np.arctan2(cloud[:, 1], cloud[:, 0]), 2.0 * np.pi)
        rings = np.minimum((ranges / (config.max_radius / config.rings)).astype(np.int64), config.rings - 1)
        sectors = np.minimum((azimuths / config.sector_width).astype(np.int64), config.sectors - 1)
        np.maximum.at(matrix, (rings, sectors), cloud[:, 2] + config.height_offset)

    ring_key = np.mean(np.isfinite(matrix), axis=1)
    return ScDescriptor(matrix, ring_key)

def distance(a: ScDescriptor, b: ScDescriptor) -> tuple[float, int]:
    """Smallest mean column cosine distance over the cyclic column shifts of b, and the shift reaching it.

    Shift s pairs column j of a with column j + s of b. Columns empty in either descriptor are skipped. Descriptors
    without any common column score 1."""
    if not a.shape == b.shape:
        raise DescriptorError(f"cannot compare descriptors of shapes {a.shape} and {b.shape}.")
    dense_a, dense_b = a.dense(), b.dense()
    norms_a, norms_b = np.linalg.norm(dense_a, axis=0), np.linalg.norm(dense_b, axis=0)
    valid_a, valid_b = norms_a > 0.0, norms_b > 0.0
    columns_a = dense_a / np.where(valid_a, norms_a, 1.0)
    columns_b = dense_b / np.where(valid_b, norms_b, 1.0)

    sectors = a.shape[1]
    similarities = columns_a.T @ columns_b
    paired = (np.arange(sectors)[np.newaxis, :] + np.arange(sectors)[:, np.newaxis]) % sectors
    columns = np.broadcast_to(np.arange(sectors), paired.shape)
    valid = valid_a[np.newaxis, :] & valid_b[paired]
    counts = valid.sum(axis=1)
    totals = np.where(valid, 1.0 - similarities[columns, paired], 0.0).sum(axis=1)
    scores = np.where(counts > 0, totals / np.maximum(counts, 1), 1.0)

    shift = int(np.argmin(scores))
    return float(scores[shift]), shift

def shift_to_yaw(shift: int, config: ScanContextConfig | None = None) -> float:
    """Yaw of the query's sensor frame relative to the candidate's, in (-pi, pi]."""
    config = config if config is not None else ScanContextConfig()
    yaw = shift * config.sector_width
    return float(yaw - 2.0 * np.pi if yaw > np.pi else yaw)

@dataclass(frozen=True)
class Candidate:
    keyframe_id: int
    map_id: int
    score: float
    shift: int
    yaw: float

@dataclass
class _Entry:
    descriptor: ScDescriptor
    keyframe_id: int
    map_id: int

class ScanContextIndex:
    """Descriptors of the keyframes of every map. One thread appends while others query."""
    config: ScanContextConfig
    _entries: list[_Entry]
    _lock: threading.Lock

    def __init__(self, config: ScanContextConfig | None = None):
        self.config = config if config is not None else ScanContextConfig()
        self._entries = []
        self._lock = threading.Lock()

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(config={self.config!r}, entries={len(self)})"

    def add(self, descriptor: ScDescriptor, keyframe_id: int, map_id: int) -> None:
        if not isinstance(descriptor, ScDescriptor):
            raise TypeError(f"unsupported parameter type(s) for descriptor: '{type(descriptor).__name__}'")
        if not descriptor.shape == (self.config.rings, self.config.sectors):
            raise DescriptorError(f"descriptor of shape {descriptor.shape} does not fit an index of {(self.config.rings, self.config.sectors)} descriptors.")
        with self._lock:
            self._entries.append(_Entry(descriptor, int(keyframe_id), int(map_id)))

    def reassign(self, old_map_id: int, new_map_id: int) -> int:
        """Moves the entries of a map to another one. Returns how many entries moved."""
        with self._lock:
            moved = [entry for entry in self._entries if entry.map_id == old_map_id]
            for entry in moved:
                entry.map_id = int(new_map_id)
        return len(moved)

    def descriptor(self, keyframe_id: int) -> ScDescriptor:
        with self._lock:
            for entry in self._entries:
                if entry.keyframe_id == keyframe_id:
                    return entry.descriptor
        raise KeyError(f"no descriptor for keyframe {keyframe_id}.")

    def keyframe_ids(self, map_id: int | None = None) -> list[int]:
        with self._lock:
            return [entry.keyframe_id for entry in self._entries if map_id is None or entry.map_id == map_id]

    def search(self, query: ScDescriptor, map_ids: set[int] | None = None, exclude: set[int] | None = None) -> list[Candidate]:
        """Candidates scoring under the threshold, best first.
            - query: ScDescriptor object to look up.
            - map_ids (optional): maps whose entries are searched. Every map is searched when omitted.
            - exclude (optional): keyframe ids left out of the search."""
        with self._lock:
            entries = [entry for entry in self._entries
                       if (map_ids is None or entry.map_id in map_ids) and (exclude is None or entry.keyframe_id not in exclude)]
        if not entries or query.is_empty():
            return []

        keys = np.array([entry.descriptor.ring_key for entry in entries])
        key_distances = np.linalg.norm(keys - query.ring_key, axis=1)
        shortlist = np.argsort(key_distances, kind="stable")[:self.config.candidates]

        candidates = []
        for index in shortlist:
            entry = entries[index]
            score, shift = distance(query, entry.descriptor)
            if score < self.config.score_threshold:
                candidates.append(Candidate(entry.keyframe_id, entry.map_id, score, shift, shift_to_yaw(shift, self.config)))
        candidates.sort(key=lambda candidate: candidate.score)
        return candidates

def search(index: ScanContextIndex, query: ScDescriptor, map_ids: set[int] | None = None, exclude: set[int] | None = None) -> list[Candidate]:
    return index.search(query, map_ids, exclude)

@dataclass(frozen=True)
class MatchedPair:
    """Active keyframe, sleeping keyframe and the pose of the active keyframe in the sleeping keyframe's frame."""
    active_keyframe: int
    sleeping_keyframe: int
    relative_pose: Pose

@dataclass(frozen=True)
class SimilarityHit:
    map_id: int
    pair: MatchedPair

@dataclass(frozen=True)
class SimilarityState:
    gamma_s: int = 0
    target_map: int | None = None
    matched_pairs: tuple[MatchedPair, ...] = field(default_factory=tuple)

def update_temporal_consistency(state: SimilarityState, hit: SimilarityHit | None, eps_th: int) -> tuple[SimilarityState, bool]:
    """Counts consecutive hits on the same sleeping map. A miss clears the streak, a hit on another map starts a new
    one. The streak is accepted once it is longer than eps_th."""
    if hit is None:
        return SimilarityState(), False
    if hit.map_id == state.target_map:
        state = SimilarityState(state.gamma_s + 1, hit.map_id, state.matched_pairs + (hit.pair,))
    else:
        state = SimilarityState(1, hit.map_id, (hit.pair,))
    return state, state.gamma_s > eps_th

def save_descriptor_csv(file_path: str, descriptor: ScDescriptor) -> None:
    """One row per ring, empty bins written as empty fields."""
    with open(file_path, "w", newline="") as descriptor_file:
        writer = csv.writer(descriptor_file)
        for row in descriptor.matrix:
            writer.writerow([repr(float(value)) if np.isfinite(value) else "" for value in row])

def load_descriptor_csv(file_path: str) -> ScDescriptor:
    with open(file_path, "r", newline="") as descriptor_file:
        matrix = np.array([[float(value) if value else -np.inf for value in row] for row in csv.reader(descriptor_file) if row])
    return ScDescriptor(matrix, np.mean(np.isfinite(matrix), axis=1))
