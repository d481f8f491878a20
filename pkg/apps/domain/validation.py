# ===== apps/domain/validation.py =====
import logging
from typing import Set

from .exceptions import (
    DuplicateNodeId,
    EmptyStage,
    MissingLink,
    NoDataNode,
    NonPositiveBandwidth,
    TopologyValidationError,
)
from .types import NodeId, Topology

logger = logging.getLogger(__name__)

NEXT = "next"
PREV = "prev"
SAME = "same"


def validate_topology(t: Topology) -> Topology:
    """Return t unchanged, or raise TopologyValidationError listing every violation"""
    violations = []

    seen = set()
    for spec in t.nodes:
        if spec.id in seen:
            violations.append(DuplicateNodeId(spec.id))
        seen.add(spec.id)

    if not t.data_nodes():
        violations.append(NoDataNode())

    for stage in range(t.num_stages):
        if not t.relays(stage):
            violations.append(EmptyStage(stage))

    for link in t.links.values():
        if link.bandwidth <= 0:
            violations.append(NonPositiveBandwidth(link.src, link.dst, link.bandwidth))

    data_ids = [d.id for d in t.data_nodes()]
    for relay in t.relays():
        if relay.stage is None or not 0 <= relay.stage < t.num_stages:
            violations.append(EmptyStage(relay.stage))
            continue
        if relay.stage == t.num_stages - 1:
            successors = data_ids
        else:
            successors = [n.id for n in t.relays(relay.stage + 1)]
        if successors and not any(t.link(relay.id, s) for s in successors):
            violations.append(MissingLink(relay.id))

    if violations:
        logger.debug(f"Topology rejected with {len(violations)} violation(s)")
        raise TopologyValidationError(violations)
    return t


def stage_neighbors(t: Topology, n: NodeId, direction: str) -> Set[NodeId]:
    """Alive nodes in the adjacent stage; data nodes bracket the pipeline"""
    spec = t.node(n)
    last = t.num_stages - 1
    data_ids = {d.id for d in t.data_nodes(alive_only=True)}

    if direction == NEXT:
        target = 0 if spec.is_data else spec.stage + 1
    elif direction == PREV:
        target = last if spec.is_data else spec.stage - 1
    else:
        raise ValueError(f"Unsupported direction: {direction}")

    if target < 0 or target > last:
        return data_ids
    return {r.id for r in t.relays(target, alive_only=True)}
