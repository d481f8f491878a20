# ===== apps/oracle/flow_graph.py =====
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from typing import Dict, List, Mapping, Optional, Tuple

import networkx as nx

from apps.cost.cost_model import CostMatrix, FlowAssignment, pair_cost, sum_cost
from apps.domain.types import NodeId, Topology

from .exceptions import InstanceTooLarge

logger = logging.getLogger(__name__)

COST_SCALE = 1000
EXHAUSTIVE_RELAY_LIMIT = 8


@dataclass
class FlowGraph:
    """Layered node-split graph for one data node (source and sink of its own flows)"""

    topology: Topology
    data_node: NodeId
    graph: nx.DiGraph
    source: tuple
    sink: tuple


@dataclass
class FlowSolution:
    assignment: FlowAssignment = field(default_factory=dict)
    total_cost: float = 0.0
    flow: int = 0
    per_data_node: Dict[NodeId, int] = field(default_factory=dict)


def _scaled(cost: float) -> int:
    return int(round(cost * COST_SCALE))


def build_flow_graph(
    t: Topology,
    data_node: NodeId,
    residual: Optional[Mapping[NodeId, int]] = None,
    supply: Optional[int] = None,
) -> FlowGraph:
    """Arcs are inserted in NodeId order so solves are deterministic"""
    g = nx.DiGraph()
    supply = t.node(data_node).capacity if supply is None else supply
    source, sink = ("super", data_node), ("sink", data_node)
    g.add_edge(source, ("src", data_node), capacity=supply, weight=0)
    g.add_node(sink)

    for relay in t.relays(alive_only=True):
        cap = relay.capacity if residual is None else residual.get(relay.id, relay.capacity)
        g.add_edge(("in", relay.id), ("out", relay.id), capacity=max(cap, 0), weight=0)

    last = t.num_stages - 1
    for relay in t.relays(alive_only=True):
        if relay.stage == 0:
            cost = pair_cost(t, data_node, relay.id)
            if not math.isinf(cost):
                g.add_edge(("src", data_node), ("in", relay.id), weight=_scaled(cost))
        if relay.stage == last:
            cost = pair_cost(t, relay.id, data_node)
            if not math.isinf(cost):
                g.add_edge(("out", relay.id), sink, weight=_scaled(cost))
        else:
            for nxt in t.relays(relay.stage + 1, alive_only=True):
                cost = pair_cost(t, relay.id, nxt.id)
                if not math.isinf(cost):
                    g.add_edge(("out", relay.id), ("in", nxt.id), weight=_scaled(cost))
    return FlowGraph(t, data_node, g, source, sink)


def _assignment_from_flow(fg: FlowGraph, flow_dict) -> FlowAssignment:
    assignment: FlowAssignment = {}
    d = fg.data_node
    for u, targets in flow_dict.items():
        for v, units in targets.items():
            if units <= 0:
                continue
            if u[0] == "src" and v[0] == "in":
                edge = (d, v[1])
            elif u[0] == "out" and v[0] == "in":
                edge = (u[1], v[1])
            elif u[0] == "out" and v[0] == "sink":
                edge = (u[1], d)
            else:
                continue
            assignment[edge] = assignment.get(edge, 0) + units
    return assignment


def min_cost_max_flow(fg: FlowGraph) -> Tuple[FlowAssignment, float]:
    """Max flow from the data node back to itself with minimum total d(i,j)"""
    if fg.graph.number_of_edges() == 0:
        return {}, 0.0
    flow_dict = nx.max_flow_min_cost(fg.graph, fg.source, fg.sink, capacity="capacity", weight="weight")
    assignment = _assignment_from_flow(fg, flow_dict)
    return assignment, sum_cost(assignment, CostMatrix(fg.topology))


def _merge(target: FlowAssignment, extra: FlowAssignment):
    for edge, units in extra.items():
        target[edge] = target.get(edge, 0) + units


def solve_topology(t: Topology, supply: Optional[Mapping[NodeId, int]] = None) -> FlowSolution:
    """Exact for one data node; round-robin single-unit decomposition for several.

    `supply` caps the flow units each data node sends, for comparisons at a given flow count.
    """
    supply = supply or {}
    data_nodes = t.data_nodes(alive_only=True)
    solution = FlowSolution(per_data_node={d.id: 0 for d in data_nodes})
    if not data_nodes:
        return solution

    if len(data_nodes) == 1:
        d = data_nodes[0].id
        limit = min(data_nodes[0].capacity, supply.get(d, data_nodes[0].capacity))
        assignment, cost = min_cost_max_flow(build_flow_graph(t, d, supply=limit))
        solution.assignment = assignment
        solution.total_cost = cost
        solution.flow = sum(units for (src, _), units in assignment.items() if src == d)
        solution.per_data_node[d] = solution.flow
        return solution

    residual = {r.id: r.capacity for r in t.relays(alive_only=True)}
    remaining = {d.id: min(d.capacity, supply.get(d.id, d.capacity)) for d in data_nodes}
    active = [d.id for d in data_nodes]
    while active:
        still_active = []
        for d in active:
            if remaining[d] <= 0:
                continue
            assignment, _ = min_cost_max_flow(build_flow_graph(t, d, residual, supply=1))
            if not assignment:
                continue
            for (src, dst), units in assignment.items():
                if dst in residual:
                    residual[dst] -= units
            _merge(solution.assignment, assignment)
            remaining[d] -= 1
            solution.per_data_node[d] += 1
            still_active.append(d)
        active = still_active
    solution.flow = sum(solution.per_data_node.values())
    solution.total_cost = sum_cost(solution.assignment, CostMatrix(t))
    logger.debug(f"Decomposed {len(data_nodes)} commodities into {solution.flow} flow units")
    return solution


def exhaustive_min_cost_flow(t: Topology, data_node: NodeId) -> Tuple[int, float]:
    """Best (flow, cost) over every multiset of full paths; small instances only"""
    relays = t.relays(alive_only=True)
    if len(relays) > EXHAUSTIVE_RELAY_LIMIT:
        raise InstanceTooLarge(len(relays), EXHAUSTIVE_RELAY_LIMIT)

    stages = [[r.id for r in t.relays(s, alive_only=True)] for s in range(t.num_stages)]
    paths: List[Tuple[Tuple[NodeId, ...], float]] = []
    for middle in product(*stages):
        path = (data_node,) + middle + (data_node,)
        cost = sum(pair_cost(t, a, b) for a, b in zip(path, path[1:]))
        if not math.isinf(cost):
            paths.append((middle, cost))

    order = [r.id for r in relays]
    position = {rid: i for i, rid in enumerate(order)}

    @lru_cache(maxsize=None)
    def best(index: int, caps: Tuple[int, ...], supply: int) -> Tuple[int, float]:
        if index == len(paths) or supply == 0:
            return 0, 0.0
        middle, cost = paths[index]
        limit = min([supply] + [caps[position[r]] for r in middle])
        top = (0, 0.0)
        for count in range(limit + 1):
            reduced = list(caps)
            for r in middle:
                reduced[position[r]] -= count
            flow, rest = best(index + 1, tuple(reduced), supply - count)
            candidate = (flow + count, rest + count * cost)
            if candidate[0] > top[0] or (candidate[0] == top[0] and candidate[1] < top[1] - 1e-12):
                top = candidate
        return top

    caps = tuple(t.node(rid).capacity for rid in order)
    return best(0, caps, t.node(data_node).capacity)
