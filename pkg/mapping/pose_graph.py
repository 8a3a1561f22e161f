"""
PoseGraph class module.

Keyframe poses linked by relative pose measurements, optimized by Levenberg-Marquardt on the composite SO(3) x R^3
manifold. An edge measuring O between nodes i and j has the residual boxminus(O, p_i^-1 . p_j), a prior edge the
residual boxminus(O, p). Loop and similarity edges go through a Huber kernel.

Two graphs are fused by moving the nodes of the first one into the frame of the second, dropping its prior and
linking both with similarity edges. The first graph's frame transform is then refined through the free motion of its
former nodes.
"""

from __future__ import annotations
from dataclasses import dataclass, field
from numpy.typing import ArrayLike, NDArray

from geometry.pose import Pose, Tangent6, boxminus, boxplus
from geometry.rotation import Rotation, hat, so3_right_jacobian_inverse
from mapping.exceptions import MissingEndpointError, PoseGraphError, UnderDeterminedGraphError

import logging
import networkx as nx
import numpy as np

from scipy import sparse
from scipy.sparse.linalg import spsolve

logger = logging.getLogger(__name__)

EDGE_KINDS = ("prior", "odometry", "loop", "similarity")

@dataclass
class OptimizerConfig:
    """Levenberg-Marquardt parameters."""
    max_iterations: int = 100
    relative_tolerance: float = 1e-9
    step_tolerance: float = 1e-8
    initial_lambda: float = 1e-4
    max_lambda: float = 1e10
    huber_delta: float = 1.0
    robust_kinds: tuple[str, ...] = ("loop", "similarity")

    def __post_init__(self):
        if not int(self.max_iterations) >= 1:
            raise ValueError(f"max_iterations must be bigger then zero, not {self.max_iterations}.")
        for name in ("relative_tolerance", "step_tolerance", "initial_lambda", "max_lambda", "huber_delta"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be bigger then zero, not {getattr(self, name)}.")
        self.robust_kinds = tuple(self.robust_kinds)
        for kind in self.robust_kinds:
            if kind not in EDGE_KINDS:
                raise ValueError(f"unknown edge kind '{kind}', expected one of {EDGE_KINDS}.")

@dataclass
class GraphNode:
    id: int
    pose: Pose
    fixed: bool = False

@dataclass
class GraphEdge:
    """Relative pose measurement. A prior edge has no source and measures the pose of its target."""
    kind: str
    source: int | None
    target: int
    measurement: Pose
    information: NDArray[np.float64] = field(default_factory=lambda: np.eye(6))

    def __post_init__(self):
        if self.kind not in EDGE_KINDS:
            raise ValueError(f"unknown edge kind '{self.kind}', expected one of {EDGE_KINDS}.")
        if not isinstance(self.measurement, Pose):
            raise TypeError(f"unsupported parameter type(s) for measurement: '{type(self.measurement).__name__}'")
        if (self.kind == "prior") != (self.source is None):
            raise ValueError("prior edges, and only them, have no source node.")
        information = np.array(self.information, dtype=np.float64)
        if not information.shape == (6, 6):
            raise ValueError(f"an information matrix must be 6x6, not {information.shape}.")
        if not np.allclose(information, information.T, rtol=1e-9, atol=1e-12):
            raise ValueError("an information matrix must be symmetric.")
        if np.min(np.linalg.eigvalsh(information)) < -1e-9 * max(1.0, np.max(np.abs(information))):
            raise ValueError("an information matrix must be positive semi-definite.")
        self.information = 0.5 * (information + information.T)

    def endpoints(self) -> tuple[int, ...]:
        return (self.target,) if self.source is None else (self.source, self.target)

    def copy(self) -> GraphEdge:
        return GraphEdge(self.kind, self.source, self.target, self.measurement.copy(), self.information.copy())

@dataclass
class OptimizationStats:
    iterations: int = 0
    initial_cost: float = 0.0
    final_cost: float = 0.0
    converged: bool = False

def predicted(edge: GraphEdge, nodes: dict[int, GraphNode]) -> Pose:
    """p_i^-1 . p_j, or p for a prior edge."""
    for endpoint in edge.endpoints():
        if endpoint not in nodes:
            raise MissingEndpointError(f"{edge.kind} edge references the missing node {endpoint}.")
    if edge.source is None:
        return nodes[edge.target].pose
    return nodes[edge.source].pose.inverse() @ nodes[edge.target].pose

def residual(edge: GraphEdge, nodes: dict[int, GraphNode]) -> Tangent6:
    return boxminus(edge.measurement, predicted(edge, nodes))

def edge_jacobians(edge: GraphEdge, nodes: dict[int, GraphNode]) -> tuple[NDArray[np.float64] | None, NDArray[np.float64]]:
    """Jacobians of the residual with respect to right perturbations of the source and target nodes.
    The source Jacobian of a prior edge is None."""
    estimate = predicted(edge, nodes)
    error = boxminus(edge.measurement, estimate)
    rotation_error = (estimate.rotation.inverse() * edge.measurement.rotation).as_matrix()

    # derivative of the residual with respect to a perturbation of the estimate
    d_estimate = np.zeros((6, 6))
    d_estimate[:3, :3] = -so3_right_jacobian_inverse(error[:3]) @ rotation_error.T
    d_estimate[3:, :3] = hat(error[3:])
    d_estimate[3:, 3:] = -np.eye(3)
    if edge.source is None:
        return None, d_estimate

    rotation_t = estimate.rotation.as_matrix().T
    d_source = np.zeros((6, 6))
    d_source[:3, :3] = -rotation_t
    d_source[3:, :3] = rotation_t @ hat(estimate.translation)
    d_source[3:, 3:] = -rotation_t
    return d_estimate @ d_source, d_estimate

def numerical_jacobians(edge: GraphEdge, nodes: dict[int, GraphNode], step: float = 1e-6) -> tuple[NDArray[np.float64] | None, NDArray[np.float64]]:
    """Central finite differences of the residual, with the same conventions as edge_jacobians."""
    def differentiate(node_id: int) -> NDArray[np.float64]:
        jacobian = np.zeros((6, 6))
        base = nodes[node_id].pose
        for k in range(6):
            delta = np.zeros(6)
            delta[k] = step
            plus = dict(nodes)
            plus[node_id] = GraphNode(node_id, boxplus(base, delta))
            minus = dict(nodes)
            minus[node_id] = GraphNode(node_id, boxplus(base, -delta))
            jacobian[:, k] = (residual(edge, plus) - residual(edge, minus)) / (2.0 * step)
        return jacobian

    return (None if edge.source is None else differentiate(edge.source)), differentiate(edge.target)

def huber_weight(squared_norm: float, delta: float) -> float:
    return 1.0 if squared_norm <= delta * delta else delta / np.sqrt(squared_norm)

def huber_cost(squared_norm: float, delta: float) -> float:
    return squared_norm if squared_norm <= delta * delta else 2.0 * delta * np.sqrt(squared_norm) - delta * delta

class PoseGraph:
    """Nodes and relative pose edges, with the statistics of the last optimization."""
    nodes: dict[int, GraphNode]
    edges: list[GraphEdge]
    stats: OptimizationStats

    def __init__(self, nodes: list[GraphNode] | None = None, edges: list[GraphEdge] | None = None):
        self.nodes = {}
        self.edges = []
        self.stats = OptimizationStats()
        for node in nodes if nodes is not None else []:
            self.add_node(node.id, node.pose, node.fixed)
        for edge in edges if edges is not None else []:
            self.add_edge(edge)

    def __len__(self) -> int:
        return len(self.nodes)

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(nodes={len(self.nodes)}, edges={len(self.edges)}, stats={self.stats!r})"

    def add_node(self, node_id: int, pose: Pose, fixed: bool = False) -> GraphNode:
        if not isinstance(pose, Pose):
            raise TypeError(f"unsupported parameter type(s) for pose: '{type(pose).__name__}'")
        if node_id in self.nodes:
            raise PoseGraphError(f"node {node_id} is already in the graph.")
        node = GraphNode(int(node_id), pose.copy(), bool(fixed))
        self.nodes[node.id] = node
        return node

    def add_edge(self, edge: GraphEdge) -> GraphEdge:
        if not isinstance(edge, GraphEdge):
            raise TypeError(f"unsupported parameter type(s) for edge: '{type(edge).__name__}'")
        for endpoint in edge.endpoints():
            if endpoint not in self.nodes:
                raise MissingEndpointError(f"{edge.kind} edge references the missing node {endpoint}.")
        self.edges.append(edge)
        return edge

    def add_prior(self, node_id: int, pose: Pose, information: ArrayLike | None = None) -> GraphEdge:
        return self.add_edge(GraphEdge("prior", None, node_id, pose.copy(), information if information is not None else np.eye(6) * 1e6))

    def add_between(self, kind: str, source: int, target: int, measurement: Pose, information: ArrayLike | None = None) -> GraphEdge:
        return self.add_edge(GraphEdge(kind, source, target, measurement.copy(), information if information is not None else np.eye(6)))

    def remove_priors(self) -> int:
        count = len(self.edges)
        self.edges = [edge for edge in self.edges if edge.kind != "prior"]
        return count - len(self.edges)

    def edges_of_kind(self, kind: str) -> list[GraphEdge]:
        return [edge for edge in self.edges if edge.kind == kind]

    def pose(self, node_id: int) -> Pose:
        return self.nodes[node_id].pose

    def poses(self) -> dict[int, Pose]:
        return {node_id: node.pose.copy() for node_id, node in self.nodes.items()}

    def copy(self) -> PoseGraph:
        graph = PoseGraph()
        graph.nodes = {node_id: GraphNode(node.id, node.pose.copy(), node.fixed) for node_id, node in self.nodes.items()}
        graph.edges = [edge.copy() for edge in self.edges]
        graph.stats = OptimizationStats(**vars(self.stats))
        return graph

    def transformed(self, transform: Pose) -> PoseGraph:
        """Graph expressed in another frame: node poses and prior measurements are left-multiplied by transform."""
        graph = self.copy()
        for node in graph.nodes.values():
            node.pose = transform @ node.pose
        for edge in graph.edges:
            if edge.kind == "prior":
                edge.measurement = transform @ edge.measurement
        return graph

    def merge(self, other: PoseGraph) -> PoseGraph:
        """Union of two graphs without shared nodes."""
        shared = set(self.nodes) & set(other.nodes)
        if shared:
            raise PoseGraphError(f"cannot merge graphs sharing the nodes {sorted(shared)}.")
        graph = self.copy()
        for node in other.nodes.values():
            graph.add_node(node.id, node.pose, node.fixed)
        graph.edges.extend(edge.copy() for edge in other.edges)
        return graph

    def to_networkx(self) -> nx.MultiGraph:
        graph = nx.MultiGraph()
        graph.add_nodes_from(self.nodes)
        graph.add_edges_from((edge.source, edge.target, {"kind": edge.kind}) for edge in self.edges if edge.source is not None)
        return graph

    def components(self) -> list[tuple[int, ...]]:
        return sorted(tuple(sorted(component)) for component in nx.connected_components(self.to_networkx()))

    def check_determined(self) -> None:
        """Raises UnderDeterminedGraphError for a connected component with neither a prior nor a fixed node."""
        anchored = {edge.target for edge in self.edges if edge.kind == "prior"} | {node.id for node in self.nodes.values() if node.fixed}
        for component in self.components():
            if not anchored.intersection(component):
                raise UnderDeterminedGraphError(f"the component of nodes {component[0]}..{component[-1]} has neither a prior nor a fixed node.", component)

    def cost(self, config: OptimizerConfig | None = None) -> float:
        config = config if config is not None else OptimizerConfig()
        total = 0.0
        for edge in self.edges:
            error = residual(edge, self.nodes)
            squared_norm = float(error @ edge.information @ error)
            total += huber_cost(squared_norm, config.huber_delta) if edge.kind in config.robust_kinds else squared_norm
        return total

    def _normal_equations(self, index: dict[int, int], config: OptimizerConfig) -> tuple[sparse.csc_matrix, NDArray[np.float64]]:
        size = 6 * len(index)
        rows, columns, values = [], [], []
        gradient = np.zeros(size)

        for edge in self.edges:
            error = residual(edge, self.nodes)
            information = edge.information
            if edge.kind in config.robust_kinds:
                information = information * huber_weight(float(error @ information @ error), config.huber_delta)
            source_jacobian, target_jacobian = edge_jacobians(edge, self.nodes)
            blocks = [(edge.target, target_jacobian)]
            if edge.source is not None:
                blocks.append((edge.source, source_jacobian))
            blocks = [(index[node_id], jacobian) for node_id, jacobian in blocks if node_id in index]

            for a, jacobian_a in blocks:
                gradient[6 * a:6 * a + 6] += jacobian_a.T @ information @ error
                for b, jacobian_b in blocks:
                    block = jacobian_a.T @ information @ jacobian_b
                    block_rows, block_columns = np.meshgrid(np.arange(6 * a, 6 * a + 6), np.arange(6 * b, 6 * b + 6), indexing="ij")
                    rows.append(block_rows.ravel())
                    columns.append(block_columns.ravel())
                    values.append(block.ravel())

        if not values:
            return sparse.csc_matrix((size, size)), gradient
        hessian = sparse.coo_matrix((np.concatenate(values), (np.concatenate(rows), np.concatenate(columns))), shape=(size, size))
        return hessian.tocsc(), gradient

    def _apply(self, index: dict[int, int], step: NDArray[np.float64]) -> dict[int, Pose]:
        previous = {}
        for node_id, k in index.items():
            previous[node_id] = self.nodes[node_id].pose
            self.nodes[node_id].pose = boxplus(previous[node_id], step[6 * k:6 * k + 6])
        return previous

    def optimize(self, config: OptimizerConfig | None = None) -> OptimizationStats:
        """Levenberg-Marquardt in place. Stops on a small relative cost decrease, a small step or max_iterations.
        Steps increasing the cost are rejected, so the final cost never exceeds the initial one."""
        config = config if config is not None else OptimizerConfig()
        self.check_determined()
        index = {node_id: k for k, node_id in enumerate(node_id for node_id in sorted(self.nodes) if not self.nodes[node_id].fixed)}
        cost = self.cost(config)
        stats = OptimizationStats(initial_cost=cost, final_cost=cost)
        damping = config.initial_lambda
        if not index or cost == 0.0:
            stats.converged = True
            self.stats = stats
            return stats

        while stats.iterations < config.max_iterations:
            stats.iterations += 1
            hessian, gradient = self._normal_equations(index, config)
            diagonal = hessian.diagonal()
            damped = hessian + sparse.diags(damping * np.maximum(diagonal, 1e-12), format="csc")
            step = -spsolve(damped, gradient)
            if not np.all(np.isfinite(step)):
                damping *= 10.0
                if damping > config.max_lambda:
                    break
                continue

            previous = self._apply(index, step)
            new_cost = self.cost(config)
            if new_cost <= cost:
                decrease = cost - new_cost
                cost = new_cost
                damping = max(damping / 10.0, 1e-12)
                logger.debug(f"pose graph iteration {stats.iterations}: cost {cost:.6g}, |step| {np.linalg.norm(step):.3g}")
                if cost == 0.0 or decrease <= config.relative_tolerance * (cost + decrease) or np.linalg.norm(step) < config.step_tolerance:
                    stats.converged = True
                    break
            else:
                for node_id, pose in previous.items():
                    self.nodes[node_id].pose = pose
                damping *= 10.0
                if damping > config.max_lambda:
                    break

        stats.final_cost = cost
        self.stats = stats
        logger.info(f"pose graph of {len(self.nodes)} nodes optimized in {stats.iterations} iterations: cost {stats.initial_cost:.6g} -> {stats.final_cost:.6g}")
        return stats

def optimize(graph: PoseGraph, config: OptimizerConfig | None = None) -> PoseGraph:
    """Optimized copy of the graph."""
    result = graph.copy()
    result.optimize(config)
    return result

def fuse_optimize(graph_a: PoseGraph, graph_s: PoseGraph, transform_a_s: Pose, similarity_edges: list[GraphEdge],
                  config: OptimizerConfig | None = None, optimize_graph: bool = True) -> PoseGraph:
    """Merges graph_a into the frame of graph_s and optimizes the result.
        - graph_a: PoseGraph object of the active map. Its prior edges are dropped.
        - graph_s: PoseGraph object of the sleeping map, whose prior fixes the gauge.
        - transform_a_s: Pose object mapping graph_a's frame into graph_s's frame.
        - similarity_edges: GraphEdge objects of kind "similarity" linking the two graphs. At least one is needed.
        - config (optional): OptimizerConfig object.
        - optimize_graph (optional): whether to run the optimization, or only return the merged graph."""
    if not similarity_edges:
        raise UnderDeterminedGraphError("fusing two maps needs at least one similarity edge.", tuple(sorted(graph_a.nodes)))
    moved = graph_a.transformed(transform_a_s)
    moved.remove_priors()
    merged = graph_s.merge(moved)
    for edge in similarity_edges:
        if edge.kind != "similarity":
            raise ValueError(f"fusion edges must be similarity edges, not {edge.kind} edges.")
        merged.add_edge(edge.copy())
    if optimize_graph:
        merged.optimize(config)
    return merged

def refined_transform(merged: PoseGraph, original_a_poses: dict[int, Pose]) -> Pose:
    """Frame transform of the former active map read off its first node: optimized pose times the pose before fusion, inverted."""
    node_id = min(node_id for node_id in original_a_poses if node_id in merged.nodes)
    return merged.pose(node_id) @ original_a_poses[node_id].inverse()

# g2o orders tangent vectors translation first
G2O_PERMUTATION = np.array([3, 4, 5, 0, 1, 2])

def _information_to_g2o(information: NDArray[np.float64]) -> list[float]:
    permuted = information[np.ix_(G2O_PERMUTATION, G2O_PERMUTATION)]
    return [float(permuted[i, j]) for i in range(6) for j in range(i, 6)]

def _information_from_g2o(values: list[float]) -> NDArray[np.float64]:
    permuted = np.zeros((6, 6))
    permuted[np.triu_indices(6)] = values
    permuted = permuted + np.triu(permuted, 1).T
    information = np.zeros((6, 6))
    information[np.ix_(G2O_PERMUTATION, G2O_PERMUTATION)] = permuted
    return information

def _pose_fields(pose: Pose) -> list[str]:
    w, x, y, z = pose.rotation.q
    return [repr(float(value)) for value in (*pose.translation, x, y, z, w)]

def _pose_from_fields(fields: list[str]) -> Pose:
    x, y, z, qx, qy, qz, qw = (float(value) for value in fields)
    return Pose(Rotation((qw, qx, qy, qz)), (x, y, z))

def save_g2o(file_path: str, graph: PoseGraph) -> None:
    """VERTEX_SE3:QUAT, FIX, EDGE_SE3:QUAT and EDGE_SE3_PRIOR lines. Edges other than odometry are preceded by a "# kind" comment."""
    with open(file_path, "w") as g2o_file:
        for node in graph.nodes.values():
            g2o_file.write(" ".join(["VERTEX_SE3:QUAT", str(node.id), *_pose_fields(node.pose)]) + "\n")
        for node in graph.nodes.values():
            if node.fixed:
                g2o_file.write(f"FIX {node.id}\n")
        for edge in graph.edges:
            information = [repr(value) for value in _information_to_g2o(edge.information)]
            if edge.kind == "prior":
                g2o_file.write(" ".join(["EDGE_SE3_PRIOR", str(edge.target), "0", *_pose_fields(edge.measurement), *information]) + "\n")
                continue
            if edge.kind != "odometry":
                g2o_file.write(f"# kind {edge.kind}\n")
            g2o_file.write(" ".join(["EDGE_SE3:QUAT", str(edge.source), str(edge.target), *_pose_fields(edge.measurement), *information]) + "\n")

def load_g2o(file_path: str) -> PoseGraph:
    graph = PoseGraph()
    edges, fixed = [], []
    kind = "odometry"
    with open(file_path, "r") as g2o_file:
        for line_number, line in enumerate(g2o_file, start=1):
            fields = line.split()
            if not fields:
                continue
            try:
                if fields[0] == "#":
                    if len(fields) == 3 and fields[1] == "kind":
                        kind = fields[2]
                elif fields[0] == "VERTEX_SE3:QUAT":
                    graph.add_node(int(fields[1]), _pose_from_fields(fields[2:9]))
                elif fields[0] == "FIX":
                    fixed.extend(int(value) for value in fields[1:])
                elif fields[0] == "EDGE_SE3:QUAT":
                    edges.append(GraphEdge(kind, int(fields[1]), int(fields[2]), _pose_from_fields(fields[3:10]),
                                           _information_from_g2o([float(value) for value in fields[10:31]])))
                    kind = "odometry"
                elif fields[0] == "EDGE_SE3_PRIOR":
                    edges.append(GraphEdge("prior", None, int(fields[1]), _pose_from_fields(fields[3:10]),
                                           _information_from_g2o([float(value) for value in fields[10:31]])))
                else:
                    raise PoseGraphError(f"unknown g2o record '{fields[0]}'.")
            except (IndexError, ValueError) as error:
                raise PoseGraphError(f"malformed g2o line {line_number} in {file_path}: {error}") from error
    for node_id in fixed:
        if node_id not in graph.nodes:
            raise PoseGraphError(f"FIX line in {file_path} names the missing vertex {node_id}.")
        graph.nodes[node_id].fixed = True
    for edge in edges:
        graph.add_edge(edge)
    return graph
