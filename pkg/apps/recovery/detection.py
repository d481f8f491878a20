# ===== apps/recovery/detection.py =====
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Mapping, Optional, Union

from apps.domain.types import NodeId
from apps.protocol.ledger import CostTable, FlowLedger

from .exceptions import InvalidSample

logger = logging.getLogger(__name__)

DEFAULT_GAMMA = 0.5
DEFAULT_K = 3.0


@dataclass
class PeerStats:
    """EWMA of COMPLETE round trips per peer"""

    gamma: float = DEFAULT_GAMMA
    k: float = DEFAULT_K
    ewma: Dict[NodeId, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.k <= 1:
            raise ValueError(f"Timeout multiplier must exceed 1, got {self.k}")

    def threshold(self, peer: NodeId, default: Optional[float] = None) -> Optional[float]:
        if peer in self.ewma:
            return self.k * self.ewma[peer]
        return default


def observe_complete(stats: PeerStats, peer: NodeId, rtt: float) -> PeerStats:
    if rtt <= 0:
        raise InvalidSample(peer, rtt)
    previous = stats.ewma.get(peer)
    stats.ewma[peer] = rtt if previous is None else stats.gamma * rtt + (1 - stats.gamma) * previous
    return stats


class ExclusionReason(str, Enum):
    DENY = "deny"
    TIMEOUT = "timeout"


class ExclusionList:
    def __init__(self):
        self._entries: Dict[NodeId, ExclusionReason] = {}

    def exclude(self, node: NodeId, reason: ExclusionReason):
        if self._entries.get(node) != reason:
            logger.debug(f"Excluding node {node} ({reason.value})")
        self._entries[node] = reason

    def release(self, node: NodeId, reason: ExclusionReason) -> bool:
        """Re-admit on the signal matching the exclusion reason"""
        if self._entries.get(node) == reason:
            del self._entries[node]
            return True
        return False

    def reason(self, node: NodeId) -> Optional[ExclusionReason]:
        return self._entries.get(node)

    def clear(self, reason: Optional[ExclusionReason] = None):
        if reason is None:
            self._entries.clear()
        else:
            self._entries = {n: r for n, r in self._entries.items() if r != reason}

    def __contains__(self, node: NodeId) -> bool:
        return node in self._entries

    def __len__(self) -> int:
        return len(self._entries)


def can_accept(alive: bool, ledger: FlowLedger, denying: bool = False) -> bool:
    """True iff the node is alive, has a free slot and is not refusing work"""
    return alive and ledger.capacity_remaining > 0 and not denying


@dataclass(frozen=True)
class Reroute:
    peer: NodeId
    expected_cost: float


@dataclass(frozen=True)
class Deny:
    reason: str = "no alternative"


ForwardDecision = Union[Reroute, Deny]


def on_forward_timeout(
    stale_peer: Optional[NodeId],
    sink: NodeId,
    exclusion: ExclusionList,
    cost_table: CostTable,
    next_peers: Mapping[NodeId, float],
    reason: ExclusionReason = ExclusionReason.TIMEOUT,
) -> ForwardDecision:
    """Exclude the unresponsive peer and pick the cheapest other advertiser for the sink.

    `stale_peer` is None when the record simply lost its downstream.
    """
    if stale_peer is not None:
        exclusion.exclude(stale_peer, reason)
        cost_table.forget(stale_peer)
    best: Optional[Reroute] = None
    for peer in sorted(next_peers):
        if peer in exclusion:
            continue
        total = cost_table.cost(peer, sink) + next_peers[peer]
        if math.isinf(total):
            continue
        if best is None or total < best.expected_cost + next_peers[best.peer]:
            best = Reroute(peer, cost_table.cost(peer, sink))
    if best is None:
        logger.warning(f"No alternative to {stale_peer} towards sink {sink}, denying upstream")
        return Deny()
    return best
