"""
MapDatabase class module.

Holds one active map, which the odometry extends, and the sleeping maps archived on over-degeneracy. Every map owns
its keyframes and a pose graph anchored by a prior on its first keyframe. Keyframe descriptors live in one Scan
Context index, partitioned by the status of the map owning them.

Lifecycle: a map is created active, becomes sleeping when hibernated and merged once fused into the active map. The
fused map keeps the active map's id and the sleeping map's frame.
"""

from __future__ import annotations
from dataclasses import dataclass, field
from numpy.typing import ArrayLike, NDArray

from geometry.pose import Pose
from geometry.rotation import Rotation
from mapping.exceptions import FusionError, MapLifecycleError
from mapping.initialization import InitResult
from mapping.local_map import voxel_downsample
from mapping.pose_graph import GraphEdge, OptimizationStats, OptimizerConfig, PoseGraph, fuse_optimize, refined_transform
from mapping.registration import RegistrationConfig, RegistrationResult, register_scans
from mapping.scan_context import (MatchedPair, ScanContextConfig, ScanContextIndex, ScDescriptor, SimilarityHit, SimilarityState, make_descriptor,
                                  update_temporal_consistency)

import logging
import numpy as np

logger = logging.getLogger(__name__)

MAP_STATUSES = ("active", "sleeping", "merged")

# (before, after); None stands for a map that does not exist yet
ALLOWED_TRANSITIONS = frozenset({(None, "active"), ("active", "sleeping"), ("sleeping", "merged")})

@dataclass
class MapManagerConfig:
    """Keyframe gates, loop closure, fusion and edge weighting parameters."""
    keyframe_distance: float = 1.0
    keyframe_angle: float = np.radians(10.0)
    cloud_voxel_size: float = 0.2
    icp_fitness_threshold: float = 0.5
    loop_closure: bool = True
    loop_cooldown: int = 5
    submap_neighbors: int = 2
    fusion: bool = True
    enhanced: bool = True
    covariance_floor: float = 1e-6
    loop_information: tuple[float, ...] = (1e4, 1e4, 1e4, 1e2, 1e2, 1e2)
    fitness_reference: float = 0.05
    fusion_translation_tolerance: float = 1.0
    fusion_min_pairs: int = 2
    scan_context: ScanContextConfig = field(default_factory=ScanContextConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    registration: RegistrationConfig = field(default_factory=lambda: RegistrationConfig(min_correspondences=30))

    def __post_init__(self):
        for name in ("keyframe_distance", "keyframe_angle", "cloud_voxel_size", "icp_fitness_threshold", "covariance_floor", "fitness_reference",
                     "fusion_translation_tolerance"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be bigger then zero, not {getattr(self, name)}.")
        for name in ("loop_cooldown", "submap_neighbors", "fusion_min_pairs"):
            if not isinstance(getattr(self, name), int):
                raise TypeError(f"unsupported parameter type(s) for {name}: '{type(getattr(self, name)).__name__}'")
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, not {getattr(self, name)}.")
        if not self.fusion_min_pairs >= 1:
            raise ValueError(f"fusion_min_pairs must be bigger then zero, not {self.fusion_min_pairs}.")
        self.loop_information = tuple(float(value) for value in self.loop_information)
        if not len(self.loop_information) == 6 or min(self.loop_information) <= 0.0:
            raise ValueError("loop_information must hold six positive values.")
        for name, kind in (("scan_context", ScanContextConfig), ("optimizer", OptimizerConfig), ("registration", RegistrationConfig)):
            if not isinstance(getattr(self, name), kind):
                raise TypeError(f"unsupported parameter type(s) for {name}: '{type(getattr(self, name)).__name__}'")

def odometry_information(covariance: ArrayLike | None, floor: float = 1e-6) -> NDArray[np.float64]:
    """Inverse of a frontend pose covariance whose eigenvalues are floored. Identity without a covariance."""
    if covariance is None:
        return np.eye(6)
    covariance = np.asarray(covariance, dtype=np.float64)
    eigenvalues, eigenvectors = np.linalg.eigh(0.5 * (covariance + covariance.T))
    information = eigenvectors @ np.diag(1.0 / np.maximum(eigenvalues, floor)) @ eigenvectors.T
    return 0.5 * (information + information.T)

def loop_information(fitness: float, config: MapManagerConfig | None = None) -> NDArray[np.float64]:
    """Loop and similarity edge weights, scaled down once the registration fitness exceeds the reference."""
    config = config if config is not None else MapManagerConfig()
    return np.diag(config.loop_information) / max(1.0, fitness / config.fitness_reference)

@dataclass
class KeyframeRecord:
    id: int
    map_id: int
    timestamp: float
    pose: Pose
    cloud: NDArray[np.float64] = field(repr=False)
    descriptor: ScDescriptor = field(repr=False)

@dataclass
class MapRecord:
    map_id: int
    status: str
    keyframes: list[int]
    graph: PoseGraph
    origin_prior: Pose
    created_at: float = 0.0
    init: InitResult | None = field(default=None, repr=False)

@dataclass(frozen=True)
class Transition:
    timestamp: float
    map_id: int
    before: str | None
    after: str

@dataclass(frozen=True)
class FusionRequest:
    active_map: int
    sleeping_map: int
    matched_pairs: tuple[MatchedPair, ...]

@dataclass
class FusionResult:
    """Outcome of a fusion. transform maps the former active frame into the fused one, correction moves the odometry."""
    map_id: int
    merged_map: int
    transform: Pose
    correction: Pose
    pairs_used: int
    stats: OptimizationStats

@dataclass
class LoopClosure:
    query_keyframe: int
    candidate_keyframe: int
    measurement: Pose
    fitness: float
    correction: Pose

class MapDatabase:
    """Maps, keyframes and descriptors of a run. Single writer: every operation runs to completion before the next one."""
    config: MapManagerConfig
    maps: dict[int, MapRecord]
    keyframes: dict[int, KeyframeRecord]
    index: ScanContextIndex
    active_id: int | None
    transitions: list[Transition]
    similarity_state: SimilarityState
    _next_map_id: int
    _next_keyframe_id: int
    _last_odometry: Pose | None
    _keyframes_since_loop: int

    def __init__(self, config: MapManagerConfig | None = None):
        """Maps, keyframes and descriptors of a run. Single writer: every operation runs to completion before the next one.
            - config (optional): MapManagerConfig object."""
        if config is not None and not isinstance(config, MapManagerConfig):
            raise TypeError(f"unsupported parameter type(s) for config: '{type(config).__name__}'")
        self.config = config if config is not None else MapManagerConfig()
        self.maps = {}
        self.keyframes = {}
        self.index = ScanContextIndex(self.config.scan_context)
        self.active_id = None
        self.transitions = []
        self.similarity_state = SimilarityState()
        self._next_map_id = 0
        self._next_keyframe_id = 0
        self._last_odometry = None
        self._keyframes_since_loop = 0

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(maps={len(self.maps)}, keyframes={len(self.keyframes)}, active={self.active_id})"

    def active_map(self) -> MapRecord | None:
        return self.maps[self.active_id] if self.active_id is not None else None

    def map_ids(self, status: str | None = None) -> list[int]:
        return [map_id for map_id, record in self.maps.items() if status is None or record.status == status]

    def submap_count(self) -> int:
        """Maps that were not merged into another one."""
        return len(self.maps) - len(self.map_ids("merged"))

    def keyframe_count(self, map_id: int | None = None) -> int:
        if map_id is None:
            return sum(len(self.maps[map_id].keyframes) for map_id in self.map_ids() if self.maps[map_id].status != "merged")
        return len(self.maps[map_id].keyframes)

    def trajectory(self, map_id: int) -> tuple[list[float], list[Pose]]:
        """Timestamps and optimized poses of a map's keyframes, in time order."""
        records = sorted((self.keyframes[keyframe_id] for keyframe_id in self.maps[map_id].keyframes), key=lambda record: record.timestamp)
        return [record.timestamp for record in records], [record.pose.copy() for record in records]

    def map_cloud(self, map_id: int) -> NDArray[np.float64]:
        """Keyframe clouds of a map moved by their optimized poses."""
        clouds = [self.keyframes[keyframe_id].pose.transform_points(self.keyframes[keyframe_id].cloud) for keyframe_id in self.maps[map_id].keyframes]
        return np.concatenate(clouds) if clouds else np.empty((0, 3))

    def _transition(self, timestamp: float, map_id: int, after: str) -> None:
        before = self.maps[map_id].status if map_id in self.maps else None
        if (before, after) not in ALLOWED_TRANSITIONS:
            raise MapLifecycleError(f"map {map_id} cannot go from {before} to {after}.")
        self.transitions.append(Transition(float(timestamp), map_id, before, after))
        if map_id in self.maps:
            self.maps[map_id].status = after
        logger.info(f"map {map_id}: {before or 'new'} -> {after} at t={timestamp:.3f}")

    def try_start_new_map(self, init: InitResult | None, timestamp: float, origin: Pose | None = None) -> int | None:
        """Creates the active map once an initialization was accepted. A rejected initialization (None) leaves the
        database without an active map; the caller retries on later windows.
            - init: InitResult object, or None for a rejected window.
            - timestamp: Float representing the time of the initialization, in seconds.
            - origin (optional): Pose object of the first keyframe. Defaults to the gravity-aligned identity pose."""
        if self.active_id is not None:
            raise MapLifecycleError(f"map {self.active_id} is still active.")
        if init is None:
            return None
        map_id = self._next_map_id
        self._next_map_id += 1
        self._transition(timestamp, map_id, "active")
        origin = origin.copy() if origin is not None else Pose(init.world_fix)
        self.maps[map_id] = MapRecord(map_id, "active", [], PoseGraph(), origin, float(timestamp), init)
        self.active_id = map_id
        self._last_odometry = None
        self._keyframes_since_loop = 0
        return map_id

    def maybe_add_keyframe(self, timestamp: float, pose: Pose, cloud: ArrayLike, covariance: ArrayLike | None = None) -> int | None:
        """Adds a keyframe to the active map when the odometry moved far enough from the last keyframe.
            - timestamp: Float representing the frame time, in seconds.
            - pose: Pose object estimated by the odometry, in the active map's frame.
            - cloud: (N, 3) sensor-frame points of the frame.
            - covariance (optional): 6x6 odometry covariance weighting the new odometry edge.

        Returns the keyframe id, or None when both gates are closed."""
        record = self.active_map()
        if record is None:
            raise MapLifecycleError("keyframes can only be added to an active map.")
        if self._last_odometry is not None:
            motion = self._last_odometry.inverse() @ pose
            if np.linalg.norm(motion.translation) < self.config.keyframe_distance and motion.rotation.angle() < self.config.keyframe_angle:
                return None

        keyframe_id = self._next_keyframe_id
        self._next_keyframe_id += 1
        cloud = voxel_downsample(cloud, self.config.cloud_voxel_size)
        descriptor = make_descriptor(cloud, self.config.scan_context)
        if not record.keyframes:
            node_pose = pose.copy()
            record.graph.add_node(keyframe_id, node_pose)
            record.graph.add_prior(keyframe_id, node_pose)
            record.origin_prior = node_pose.copy()
        else:
            previous = record.keyframes[-1]
            measurement = self._last_odometry.inverse() @ pose
            node_pose = self.keyframes[previous].pose @ measurement
            record.graph.add_node(keyframe_id, node_pose)
            record.graph.add_between("odometry", previous, keyframe_id, measurement, odometry_information(covariance, self.config.covariance_floor))

        self.keyframes[keyframe_id] = KeyframeRecord(keyframe_id, record.map_id, float(timestamp), node_pose.copy(), cloud, descriptor)
        record.keyframes.append(keyframe_id)
        self.index.add(descriptor, keyframe_id, record.map_id)
        self._last_odometry = pose.copy()
        self._keyframes_since_loop += 1
        logger.debug(f"keyframe {keyframe_id} added to map {record.map_id} at t={timestamp:.3f}")
        return keyframe_id

    def hibernate(self, timestamp: float) -> int:
        """Archives the active map as a sleeping map. No map is active afterwards."""
        if self.active_id is None:
            raise MapLifecycleError("there is no active map to hibernate.")
        map_id = self.active_id
        self._transition(timestamp, map_id, "sleeping")
        self.active_id = None
        self._last_odometry = None
        self.similarity_state = SimilarityState()
        return map_id

    def _register_pair(self, query: KeyframeRecord, target_cloud: NDArray[np.float64], initial: Pose) -> RegistrationResult | None:
        """Registration of a query keyframe cloud to a target cloud, None when it fails the fitness gate."""
        result = register_scans(query.cloud, target_cloud, initial, self.config.registration, voxel_size=self.config.cloud_voxel_size)
        if result.degenerate or not result.fitness < self.config.icp_fitness_threshold:
            logger.warning(f"keyframe {query.id}: registration rejected (fitness {result.fitness:.3g} m).")
            return None
        return result

    def detect_similarity(self, keyframe_id: int) -> FusionRequest | None:
        """Looks the keyframe up among the sleeping maps and returns a fusion request once the streak of hits on one
        sleeping map is long enough."""
        sleeping = set(self.map_ids("sleeping"))
        if self.active_id is None or not sleeping:
            return None
        candidates = self.index.search(self.keyframes[keyframe_id].descriptor, map_ids=sleeping)
        hit = None
        if candidates:
            best = candidates[0]
            hit = SimilarityHit(best.map_id, MatchedPair(keyframe_id, best.keyframe_id, Pose(Rotation.rotz(best.yaw))))
        self.similarity_state, accepted = update_temporal_consistency(self.similarity_state, hit, self.config.scan_context.consistency_threshold)
        if not accepted:
            return None
        request = FusionRequest(self.active_id, self.similarity_state.target_map, self.similarity_state.matched_pairs)
        logger.info(f"map {request.active_map} overlaps sleeping map {request.sleeping_map}: {len(request.matched_pairs)} matched keyframes")
        self.similarity_state = SimilarityState()
        return request

    def _verified_pairs(self, request: FusionRequest) -> list[tuple[float, MatchedPair, Pose]]:
        """Registers every matched pair against the sleeping keyframe's neighbourhood and keeps the largest group of
        pairs agreeing on the frame transform. Each kept item is (fitness, refined pair, implied transform)."""
        sector = self.config.scan_context.sector_width
        verified = []
        for pair in request.matched_pairs:
            query, target = self.keyframes[pair.active_keyframe], self.keyframes[pair.sleeping_keyframe]
            result = self._register_pair(query, self._submap_cloud(target.id), pair.relative_pose)
            if result is None:
                continue
            turn = (result.pose.rotation * pair.relative_pose.rotation.inverse()).angle()
            if turn > sector:
                logger.warning(f"keyframe {query.id}: registration moved {np.degrees(turn):.1f} deg away from the descriptor yaw, pair dropped.")
                continue
            transform = target.pose @ result.pose @ query.pose.inverse()
            verified.append((result.fitness, MatchedPair(query.id, target.id, result.pose), transform))

        groups = [[other for other in verified if other[2].is_close(item[2], self.config.fusion_translation_tolerance, sector)] for item in verified]
        # largest group, then best fitness
        best_group = min(groups, key=lambda group: (-len(group), min(item[0] for item in group)), default=[])
        if len(best_group) < self.config.fusion_min_pairs or 2 * len(best_group) <= len(verified):
            raise FusionError(f"{len(best_group)} of the {len(request.matched_pairs)} matched pairs between maps {request.active_map} and "
                              f"{request.sleeping_map} agree on the frame transform ({len(verified)} passed the registration gate).")
        return sorted(best_group, key=lambda item: item[0])

    def fuse(self, request: FusionRequest, timestamp: float | None = None) -> FusionResult:
        """Fuses the sleeping map of a request into the active map.

        Each matched pair is registered against the sleeping keyframe and its neighbours, starting from the
        descriptor's yaw. Pairs failing the fitness gate or turning away from the descriptor's yaw by more than a
        sector are dropped, and the remaining pairs must mostly agree on the transform between the two frames. The
        best agreeing pair sets the initial transform, the active map is moved into the sleeping map's frame and both
        graphs are optimized together with one similarity edge per agreeing pair. Without enhanced constraints, only
        the best pair is kept and the graph is not optimized."""
        if request.active_map != self.active_id:
            raise MapLifecycleError(f"map {request.active_map} is not the active map.")
        if request.sleeping_map not in self.maps or self.maps[request.sleeping_map].status != "sleeping":
            raise MapLifecycleError(f"map {request.sleeping_map} is not a sleeping map.")
        active, sleeping = self.maps[request.active_map], self.maps[request.sleeping_map]

        try:
            pairs = self._verified_pairs(request)
        except FusionError:
            self.similarity_state = SimilarityState()
            raise
        transform = pairs[0][2]
        if not self.config.enhanced:
            pairs = pairs[:1]
        edges = [GraphEdge("similarity", pair.sleeping_keyframe, pair.active_keyframe, pair.relative_pose, loop_information(fitness, self.config))
                 for fitness, pair, _ in pairs]

        original = active.graph.poses()
        merged = fuse_optimize(active.graph, sleeping.graph, transform, edges, self.config.optimizer, optimize_graph=self.config.enhanced)
        refined = refined_transform(merged, original) if self.config.enhanced else transform
        last = active.keyframes[-1]
        correction = merged.pose(last) @ original[last].inverse()

        active.graph = merged
        active.keyframes = sorted(sleeping.keyframes + active.keyframes)
        active.origin_prior = sleeping.origin_prior.copy()
        for keyframe_id in active.keyframes:
            self.keyframes[keyframe_id].map_id = active.map_id
            self.keyframes[keyframe_id].pose = merged.pose(keyframe_id).copy()
        self.index.reassign(sleeping.map_id, active.map_id)
        sleeping.keyframes = []
        self._transition(timestamp if timestamp is not None else self.keyframes[last].timestamp, sleeping.map_id, "merged")
        self._last_odometry = correction @ self._last_odometry if self._last_odometry is not None else None
        self.similarity_state = SimilarityState()

        logger.info(f"map {sleeping.map_id} fused into map {active.map_id} with {len(edges)} similarity edges")
        return FusionResult(active.map_id, sleeping.map_id, refined, correction, len(edges), merged.stats)

    def _submap_cloud(self, keyframe_id: int) -> NDArray[np.float64]:
        """Clouds of a keyframe and its neighbours in the same map, in the keyframe's frame."""
        record = self.maps[self.keyframes[keyframe_id].map_id]
        position = record.keyframes.index(keyframe_id)
        neighbors = record.keyframes[max(0, position - self.config.submap_neighbors):position + self.config.submap_neighbors + 1]
        center = self.keyframes[keyframe_id].pose.inverse()
        clouds = [(center @ self.keyframes[neighbor].pose).transform_points(self.keyframes[neighbor].cloud) for neighbor in neighbors]
        return voxel_downsample(np.concatenate(clouds), self.config.cloud_voxel_size)

    def detect_loop(self, keyframe_id: int) -> LoopClosure | None:
        """Closes a loop inside the active map: the keyframe is looked up among the older keyframes of the map, the
        best candidate is verified by registration against its neighbourhood, a loop edge is added and the map's
        graph is optimized."""
        record = self.active_map()
        if record is None or not self.config.loop_closure or self._keyframes_since_loop <= self.config.loop_cooldown:
            return None
        recent = set(record.keyframes[-(self.config.scan_context.exclude_recent + 1):])
        candidates = self.index.search(self.keyframes[keyframe_id].descriptor, map_ids={record.map_id}, exclude=recent | {keyframe_id})
        if not candidates:
            return None

        best = candidates[0]
        result = self._register_pair(self.keyframes[keyframe_id], self._submap_cloud(best.keyframe_id), Pose(Rotation.rotz(best.yaw)))
        if result is None:
            return None
        record.graph.add_between("loop", best.keyframe_id, keyframe_id, result.pose, loop_information(result.fitness, self.config))
        self._keyframes_since_loop = 0

        before = self.keyframes[record.keyframes[-1]].pose
        if self.config.enhanced:
            record.graph.optimize(self.config.optimizer)
            for node_id in record.keyframes:
                self.keyframes[node_id].pose = record.graph.pose(node_id).copy()
        correction = self.keyframes[record.keyframes[-1]].pose @ before.inverse()
        if self._last_odometry is not None:
            self._last_odometry = correction @ self._last_odometry
        logger.info(f"loop closed in map {record.map_id}: keyframe {keyframe_id} -> {best.keyframe_id} (fitness {result.fitness:.3g} m)")
        return LoopClosure(keyframe_id, best.keyframe_id, result.pose, result.fitness, correction)
