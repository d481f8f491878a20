# ===== apps/protocol/ledger.py =====
import math
from dataclasses import asdict, dataclass
from typing import Dict, Iterable, List, Optional

from apps.domain.types import NodeId

from .exceptions import CapacityExhausted

COST_EPSILON = 1e-9

RELAY = "relay"
SOURCE = "source"
SINK = "sink"


@dataclass
class FlowRecord:
    """One hop-pair of a flow held by a node.

    `upstream_flow`/`downstream_flow` name the neighbouring records, so pairing
    is checkable hop by hop.
    """

    flow_id: int
    sink: NodeId
    cost_to_sink: float
    upstream: Optional[NodeId] = None
    upstream_flow: Optional[int] = None
    downstream: Optional[NodeId] = None
    downstream_flow: Optional[int] = None
    kind: str = RELAY
    since_round: int = 0

    @property
    def is_paired(self) -> bool:
        return self.upstream is not None and self.downstream is not None

    def as_dict(self) -> dict:
        return asdict(self)


class FlowLedger:
    """Local pairing state of one node"""

    def __init__(self, owner: NodeId, capacity: int, is_data: bool = False):
        self.owner = owner
        self.capacity = capacity
        self.is_data = is_data
        self.records: Dict[int, FlowRecord] = {}

    # ============================================================
    # VIEWS
    # ============================================================

    def _sorted(self, records: Iterable[FlowRecord]) -> List[FlowRecord]:
        return sorted(records, key=lambda r: r.flow_id)

    @property
    def paired(self) -> List[FlowRecord]:
        if self.is_data:
            return self._sorted(r for r in self.records.values()
                                if (r.kind == SOURCE and r.downstream is not None)
                                or (r.kind == SINK and r.upstream is not None))
        return self._sorted(r for r in self.records.values() if r.is_paired)

    @property
    def unpaired_outflow(self) -> List[FlowRecord]:
        """Records offering a path to the sink and waiting for a supplier"""
        if self.is_data:
            return self._sorted(r for r in self.records.values() if r.kind == SINK and r.upstream is None)
        return self._sorted(r for r in self.records.values()
                            if r.upstream is None and r.downstream is not None)

    @property
    def unpaired_inflow(self) -> List[FlowRecord]:
        if self.is_data:
            return []
        return self._sorted(r for r in self.records.values()
                            if r.upstream is not None and r.downstream is None)

    @property
    def sources(self) -> List[FlowRecord]:
        return self._sorted(r for r in self.records.values() if r.kind == SOURCE)

    @property
    def outgoing_count(self) -> int:
        if self.is_data:
            return len(self.sources)
        return sum(1 for r in self.records.values() if r.downstream is not None)

    @property
    def capacity_remaining(self) -> int:
        return self.capacity - self.outgoing_count

    @property
    def is_stable(self) -> bool:
        if self.is_data:
            return True
        return not self.unpaired_inflow and not self.unpaired_outflow

    def get(self, flow_id: int) -> Optional[FlowRecord]:
        return self.records.get(flow_id)

    def advertised_cost(self, sink: NodeId) -> float:
        costs = [r.cost_to_sink for r in self.unpaired_outflow if r.sink == sink]
        return min(costs) if costs else math.inf

    def advertised(self) -> Dict[NodeId, float]:
        result: Dict[NodeId, float] = {}
        for record in self.unpaired_outflow:
            result[record.sink] = min(result.get(record.sink, math.inf), record.cost_to_sink)
        return result

    def claimable(self, sink: NodeId, expected_cost: float, epsilon: float = COST_EPSILON) -> Optional[FlowRecord]:
        if math.isinf(expected_cost):
            return None
        for record in self.unpaired_outflow:
            if record.sink == sink and abs(record.cost_to_sink - expected_cost) <= epsilon:
                return record
        return None

    def flows_through(self) -> int:
        """Outflow records that carry a supplier, used for utilization"""
        return len(self.paired)

    # ============================================================
    # MUTATION
    # ============================================================

    def add(self, record: FlowRecord) -> FlowRecord:
        if record.downstream is not None and not self.is_data and self.capacity_remaining <= 0:
            raise CapacityExhausted(self.owner)
        if record.kind == SOURCE and self.capacity_remaining <= 0:
            raise CapacityExhausted(self.owner)
        self.records[record.flow_id] = record
        return record

    def remove(self, flow_id: int) -> Optional[FlowRecord]:
        return self.records.pop(flow_id, None)

    def clear(self):
        self.records.clear()

    def check(self):
        if not 0 <= self.capacity_remaining:
            raise CapacityExhausted(self.owner)


class CostTable:
    """Advertised cost-to-sink per next-stage peer; absent means +inf"""

    def __init__(self, owner: NodeId):
        self.owner = owner
        self._entries: Dict[NodeId, Dict[NodeId, float]] = {}

    def update(self, peer: NodeId, sink: NodeId, cost: float):
        if math.isinf(cost):
            self._entries.get(peer, {}).pop(sink, None)
            return
        if cost < 0:
            raise ValueError(f"Negative cost {cost} from peer {peer}")
        self._entries.setdefault(peer, {})[sink] = cost

    def cost(self, peer: NodeId, sink: NodeId) -> float:
        return self._entries.get(peer, {}).get(sink, math.inf)

    def entries(self, peer: NodeId) -> Dict[NodeId, float]:
        return dict(self._entries.get(peer, {}))

    def forget(self, peer: NodeId):
        self._entries.pop(peer, None)

    def minimum(self, sink: NodeId) -> float:
        return min((e[sink] for e in self._entries.values() if sink in e), default=math.inf)

    def clear(self):
        self._entries.clear()
