# ===== apps/membership/registry.py =====
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional

from apps.domain.types import NodeId, StageId

logger = logging.getLogger(__name__)


@dataclass
class RegistryEntry:
    node: NodeId
    stage: Optional[StageId]
    is_data: bool
    registered_at: float
    refreshed_at: float
    routable_from: int = 0


class Registry:
    """Directory of live nodes per stage.

    Entries expire `ttl` time units after their last refresh; lookups see the
    directory as it was `lookup_delay` ago.
    """

    def __init__(self, ttl: float, lookup_delay: float = 0.0):
        self.ttl = ttl
        self.lookup_delay = lookup_delay
        self._entries: Dict[NodeId, RegistryEntry] = {}

    def register(self, node: NodeId, stage: Optional[StageId], is_data: bool, now: float,
                 routable_from: int = 0) -> RegistryEntry:
        entry = RegistryEntry(node, stage, is_data, now, now, routable_from)
        self._entries[node] = entry
        logger.debug(f"Registered node {node} at stage {stage}, routable from iteration {routable_from}")
        return entry

    def refresh(self, node: NodeId, now: float):
        entry = self._entries.get(node)
        if entry is not None:
            entry.refreshed_at = now

    def remove(self, node: NodeId):
        self._entries.pop(node, None)

    def _visible(self, entry: RegistryEntry, now: float, iteration: Optional[int]) -> bool:
        as_of = now - self.lookup_delay
        if entry.registered_at > as_of and entry.registered_at > 0:
            return False
        if entry.refreshed_at + self.ttl < as_of:
            return False
        return iteration is None or entry.routable_from <= iteration

    def stage_members(self, stage: StageId, now: float, iteration: Optional[int] = None) -> List[NodeId]:
        return sorted(
            e.node for e in self._entries.values()
            if not e.is_data and e.stage == stage and self._visible(e, now, iteration)
        )

    def data_members(self, now: float) -> List[NodeId]:
        return sorted(e.node for e in self._entries.values() if e.is_data and self._visible(e, now, None))

    def entry(self, node: NodeId) -> Optional[RegistryEntry]:
        return self._entries.get(node)

    def __contains__(self, node: NodeId) -> bool:
        return node in self._entries
