# ===== apps/domain/types.py =====
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Dict, Iterable, List, Optional, Tuple

from .exceptions import UnknownNode

NodeId = int
StageId = int


class NodeRole(str, Enum):
    DATA = "data"
    RELAY = "relay"


@dataclass(frozen=True)
class NodeSpec:
    id: NodeId
    role: NodeRole
    stage: Optional[StageId] = None
    capacity: int = 1
    compute_cost: float = 0.0
    alive: bool = True

    @property
    def is_data(self) -> bool:
        return self.role == NodeRole.DATA


@dataclass(frozen=True)
class LinkSpec:
    src: NodeId
    dst: NodeId
    latency: float
    bandwidth: float


@dataclass(frozen=True)
class Topology:
    """Static world the protocol runs over.

    Nodes are kept as a tuple so duplicates survive until validation reports them.
    """

    nodes: Tuple[NodeSpec, ...]
    links: Dict[Tuple[NodeId, NodeId], LinkSpec]
    num_stages: int
    activation_size: float = 0.0

    @cached_property
    def _index(self) -> Dict[NodeId, NodeSpec]:
        return {n.id: n for n in self.nodes}

    def node(self, node_id: NodeId) -> NodeSpec:
        try:
            return self._index[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    def has_node(self, node_id: NodeId) -> bool:
        return node_id in self._index

    def link(self, src: NodeId, dst: NodeId) -> Optional[LinkSpec]:
        return self.links.get((src, dst))

    @property
    def node_ids(self) -> List[NodeId]:
        return sorted(self._index)

    def data_nodes(self, alive_only: bool = False) -> List[NodeSpec]:
        return sorted(
            (n for n in self._index.values() if n.is_data and (n.alive or not alive_only)),
            key=lambda n: n.id,
        )

    def relays(self, stage: Optional[StageId] = None, alive_only: bool = False) -> List[NodeSpec]:
        return sorted(
            (
                n for n in self._index.values()
                if not n.is_data
                and (stage is None or n.stage == stage)
                and (n.alive or not alive_only)
            ),
            key=lambda n: n.id,
        )

    def stage_capacity(self, stage: StageId) -> int:
        return sum(n.capacity for n in self.relays(stage, alive_only=True))

    # ============================================================
    # DERIVED TOPOLOGIES
    # ============================================================

    def with_nodes(self, nodes: Iterable[NodeSpec], links: Iterable[LinkSpec] = ()) -> Topology:
        merged = dict(self.links)
        for link in links:
            merged[(link.src, link.dst)] = link
        return dataclasses.replace(self, nodes=self.nodes + tuple(nodes), links=merged)

    def with_alive(self, node_id: NodeId, alive: bool) -> Topology:
        spec = self.node(node_id)
        nodes = tuple(dataclasses.replace(n, alive=alive) if n.id == node_id else n for n in self.nodes)
        if spec.alive == alive:
            return self
        return dataclasses.replace(self, nodes=nodes)

    def with_stage(self, node_id: NodeId, stage: StageId) -> Topology:
        self.node(node_id)
        nodes = tuple(dataclasses.replace(n, stage=stage) if n.id == node_id else n for n in self.nodes)
        return dataclasses.replace(self, nodes=nodes)


@dataclass
class Microbatch:
    id: int
    origin: NodeId
    path: List[NodeId] = field(default_factory=list)

    def __post_init__(self):
        if not self.path:
            self.path = [self.origin]
