# ===== apps/oracle/greedy.py =====
import math
from typing import Collection, Dict, List, Mapping, Optional, Tuple

from apps.cost.cost_model import CostMatrix, FlowAssignment, assignment_from_paths, pair_cost, sum_cost
from apps.domain.types import NodeId, Topology
from apps.domain.validation import NEXT, stage_neighbors

from .exceptions import NoAvailableSuccessor


def greedy_route(
    t: Topology,
    from_node: NodeId,
    load: Optional[Mapping[NodeId, int]] = None,
    excluded: Collection[NodeId] = (),
    origin: Optional[NodeId] = None,
) -> NodeId:
    """Closest alive next-stage node with spare capacity; ties go to the lowest id.

    Past the last stage only `origin` qualifies when it is given.
    """
    load = load or {}
    best: Optional[Tuple[float, NodeId]] = None
    for candidate in sorted(stage_neighbors(t, from_node, NEXT)):
        if candidate in excluded:
            continue
        spec = t.node(candidate)
        if spec.is_data:
            if origin is not None and candidate != origin:
                continue
        elif load.get(candidate, 0) >= spec.capacity:
            continue
        cost = pair_cost(t, from_node, candidate)
        if math.isinf(cost):
            continue
        if best is None or cost < best[0]:
            best = (cost, candidate)
    if best is None:
        raise NoAvailableSuccessor(from_node)
    return best[1]


def greedy_paths(t: Topology, supply: Optional[Mapping[NodeId, int]] = None) -> Dict[NodeId, List[List[NodeId]]]:
    """Route one flow unit at a time per data node, round-robin, until no stage has room"""
    supply = supply or {}
    load: Dict[NodeId, int] = {}
    remaining = {d.id: min(d.capacity, supply.get(d.id, d.capacity)) for d in t.data_nodes(alive_only=True)}
    paths: Dict[NodeId, List[List[NodeId]]] = {d: [] for d in remaining}
    active = list(remaining)
    while active:
        still_active = []
        for d in active:
            if remaining[d] <= 0:
                continue
            path = [d]
            try:
                for _ in range(t.num_stages + 1):
                    path.append(greedy_route(t, path[-1], load, origin=d))
            except NoAvailableSuccessor:
                continue
            for relay in path[1:-1]:
                load[relay] = load.get(relay, 0) + 1
            paths[d].append(path)
            remaining[d] -= 1
            still_active.append(d)
        active = still_active
    return paths


def greedy_assignment(t: Topology, supply: Optional[Mapping[NodeId, int]] = None) -> Tuple[FlowAssignment, float]:
    all_paths = [p for per_node in greedy_paths(t, supply).values() for p in per_node]
    assignment = assignment_from_paths(all_paths)
    return assignment, sum_cost(assignment, CostMatrix(t))
