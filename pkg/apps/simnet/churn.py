# ===== apps/simnet/churn.py =====
from dataclasses import dataclass
from typing import Iterable, List

from apps.domain.types import NodeId

CRASH = "crash"
REJOIN = "rejoin"


@dataclass(frozen=True)
class ChurnEvent:
    time: float
    action: str
    node: NodeId


def inject_churn(
    p: float,
    alive_relays: Iterable[NodeId],
    crashed_relays: Iterable[NodeId],
    rng,
    start: float,
    length: float,
) -> List[ChurnEvent]:
    """Crash/rejoin plan for one iteration; data nodes are never passed in"""
    if not 0 <= p <= 1:
        raise ValueError(f"Churn probability must be in [0, 1], got {p}")
    events = []
    for node in sorted(crashed_relays):
        if rng.random() < p:
            events.append(ChurnEvent(start, REJOIN, node))
    for node in sorted(alive_relays):
        draw = rng.random()
        offset = rng.random() * length
        if draw < p:
            events.append(ChurnEvent(start + offset, CRASH, node))
    return sorted(events, key=lambda e: (e.time, e.node, e.action))
