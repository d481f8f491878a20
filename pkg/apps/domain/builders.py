# ===== apps/domain/builders.py =====
from typing import Callable, Mapping, Optional, Sequence, Union

from .types import LinkSpec, NodeId, NodeRole, NodeSpec, Topology

LatencySource = Union[float, Mapping, Callable[[NodeId, NodeId], float]]


def _resolve(source, a: NodeId, b: NodeId, default: float) -> float:
    if callable(source):
        return float(source(a, b))
    if isinstance(source, Mapping):
        return float(source.get((a, b), source.get((b, a), default)))
    return float(source)


def layered_topology(
    relay_capacities: Sequence[Sequence[int]],
    data_capacities: Sequence[int] = (1,),
    latency: LatencySource = 1.0,
    bandwidth: LatencySource = 1.0,
    activation_size: float = 0.0,
    compute_costs: Optional[Mapping[NodeId, float]] = None,
    full_mesh: bool = False,
) -> Topology:
    """Build a pipeline topology with dense ids: data nodes first, then relays stage by stage.

    Link parameters are symmetric; `latency`/`bandwidth` get the (low id, high id) pair.
    """
    compute_costs = compute_costs or {}
    nodes = []
    next_id = 0
    for cap in data_capacities:
        nodes.append(NodeSpec(next_id, NodeRole.DATA, None, cap, compute_costs.get(next_id, 0.0)))
        next_id += 1

    stage_ids = []
    for stage, caps in enumerate(relay_capacities):
        ids = []
        for cap in caps:
            nodes.append(NodeSpec(next_id, NodeRole.RELAY, stage, cap, compute_costs.get(next_id, 0.0)))
            ids.append(next_id)
            next_id += 1
        stage_ids.append(ids)

    data_ids = list(range(len(data_capacities)))
    pairs = set()
    if full_mesh:
        all_ids = [n.id for n in nodes]
        pairs = {(a, b) for a in all_ids for b in all_ids if a < b}
    else:
        layers = [data_ids] + stage_ids + [data_ids]
        for upper, lower in zip(layers, layers[1:]):
            for a in upper:
                for b in lower:
                    if a != b:
                        pairs.add((min(a, b), max(a, b)))

    links = {}
    for a, b in sorted(pairs):
        lat = _resolve(latency, a, b, 1.0)
        bw = _resolve(bandwidth, a, b, 1.0)
        links[(a, b)] = LinkSpec(a, b, lat, bw)
        links[(b, a)] = LinkSpec(b, a, lat, bw)

    return Topology(tuple(nodes), links, len(relay_capacities), activation_size)


def random_layered_topology(rng, max_stages: int = 3, max_relays: int = 8, max_capacity: int = 2,
                            max_data_capacity: int = 4, max_latency: int = 20) -> Topology:
    """Small single-data-node pipeline with every stage populated and integer latencies"""
    num_stages = int(rng.integers(1, max_stages + 1))
    total = int(rng.integers(num_stages, max_relays + 1))
    sizes = [1] * num_stages
    for _ in range(total - num_stages):
        sizes[int(rng.integers(0, num_stages))] += 1
    caps = [[int(rng.integers(1, max_capacity + 1)) for _ in range(size)] for size in sizes]
    return layered_topology(
        caps,
        data_capacities=[int(rng.integers(1, max_data_capacity + 1))],
        latency=lambda a, b: int(rng.integers(1, max_latency + 1)),
    )
