# ===== apps/cost/cost_model.py =====
import math
from collections.abc import Mapping
from typing import Dict, Iterator, Sequence, Tuple

from apps.domain.exceptions import MissingLink
from apps.domain.types import LinkSpec, NodeId, NodeSpec, Topology

from .exceptions import MissingEdgeCost

EdgeCost = float
Edge = Tuple[NodeId, NodeId]
FlowAssignment = Dict[Edge, int]

INFINITE_COST = math.inf


def edge_cost(i: NodeSpec, j: NodeSpec, link_ij: LinkSpec, link_ji: LinkSpec, size: float) -> EdgeCost:
    """Averaged compute, latency and transfer cost of one microbatch crossing i<->j"""
    if link_ij.bandwidth <= 0 or link_ji.bandwidth <= 0:
        raise ValueError(f"Bandwidth must be positive on {i.id}<->{j.id}")
    compute = (i.compute_cost + j.compute_cost) / 2
    latency = (link_ij.latency + link_ji.latency) / 2
    transfer = 2 * size / (link_ij.bandwidth + link_ji.bandwidth)
    return compute + latency + transfer


def pair_cost(t: Topology, i: NodeId, j: NodeId) -> EdgeCost:
    """edge_cost for two topology nodes, +inf when either direction has no link"""
    link_ij = t.link(i, j)
    link_ji = t.link(j, i)
    if link_ij is None or link_ji is None:
        return INFINITE_COST
    return edge_cost(t.node(i), t.node(j), link_ij, link_ji, t.activation_size)


class CostMatrix(Mapping):
    """Lazily computed d(i,j) over a topology; absent links raise KeyError"""

    def __init__(self, topology: Topology):
        self.topology = topology
        self._cache: Dict[Edge, EdgeCost] = {}

    def __getitem__(self, edge: Edge) -> EdgeCost:
        if edge not in self._cache:
            value = pair_cost(self.topology, *edge)
            if math.isinf(value):
                raise KeyError(edge)
            self._cache[edge] = value
        return self._cache[edge]

    def get_cost(self, i: NodeId, j: NodeId) -> EdgeCost:
        try:
            return self[(i, j)]
        except KeyError:
            return INFINITE_COST

    def __iter__(self) -> Iterator[Edge]:
        return iter(self.topology.links)

    def __len__(self) -> int:
        return len(self.topology.links)


def _weighted_terms(assignment: FlowAssignment, costs: Mapping):
    for edge, flow in assignment.items():
        if flow <= 0:
            continue
        try:
            cost = costs[edge]
        except KeyError:
            raise MissingEdgeCost(edge) from None
        yield flow * cost


def sum_cost(assignment: FlowAssignment, costs: Mapping) -> float:
    return float(sum(_weighted_terms(assignment, costs)))


def minimax_cost(assignment: FlowAssignment, costs: Mapping) -> float:
    return float(max(_weighted_terms(assignment, costs), default=0.0))


def path_cost(path: Sequence[NodeId], topology: Topology) -> float:
    total = 0.0
    for src, dst in zip(path, path[1:]):
        cost = pair_cost(topology, src, dst)
        if math.isinf(cost):
            raise MissingLink(src, dst)
        total += cost
    return total


def assignment_from_paths(paths) -> FlowAssignment:
    """Count hop usage over a collection of node paths"""
    assignment: FlowAssignment = {}
    for path in paths:
        for edge in zip(path, path[1:]):
            assignment[edge] = assignment.get(edge, 0) + 1
    return assignment
