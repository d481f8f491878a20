# ===== apps/protocol/operations.py =====
import logging
import math
from dataclasses import dataclass
from typing import Callable, Collection, Iterable, Mapping, Optional, Sequence, Tuple, Union

from apps.domain.types import NodeId

from .annealing import AnnealerState, annealing_accept
from .exceptions import CapacityExhausted
from .ledger import COST_EPSILON, RELAY, SOURCE, CostTable, FlowLedger, FlowRecord

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FlowTarget:
    peer: NodeId
    sink: NodeId
    expected_cost: float
    total_cost: float


@dataclass(frozen=True)
class Approve:
    flow_id: int
    sink: NodeId
    cost: float


@dataclass(frozen=True)
class Reject:
    sink: NodeId
    current_cost: float


@dataclass(frozen=True)
class EdgeView:
    """A fully paired record seen from the stage it sits in"""

    node: NodeId
    flow_id: int
    downstream: NodeId
    downstream_flow: int
    sink: NodeId
    edge_cost: float
    downstream_cost: float = 0.0


@dataclass(frozen=True)
class ChangeProposal:
    mine: EdgeView
    other: EdgeView
    cost_current: float
    cost_new: float

    @property
    def gain(self) -> float:
        return self.cost_current - self.cost_new


@dataclass(frozen=True)
class Segment:
    """Upstream a, middle b, downstream c of one flow at b"""

    a: NodeId
    a_flow: int
    b: NodeId
    b_flow: int
    c: NodeId
    c_flow: int
    sink: NodeId
    cost_ab: float
    cost_bc: float


@dataclass(frozen=True)
class RedirectProposal:
    segment: Segment
    cost_as: float
    cost_sc: float

    @property
    def cost_current(self) -> float:
        return self.segment.cost_ab + self.segment.cost_bc

    @property
    def cost_new(self) -> float:
        return self.cost_as + self.cost_sc

    @property
    def gain(self) -> float:
        return self.cost_current - self.cost_new


# ============================================================
# REQUEST FLOW
# ============================================================

def eligible_sinks(ledger: FlowLedger) -> Optional[set]:
    """Sinks the node may claim for right now, or None for any sink"""
    if ledger.is_data:
        return {ledger.owner} if ledger.capacity_remaining > 0 else set()
    inflow = ledger.unpaired_inflow
    if inflow:
        return {r.sink for r in inflow}
    if ledger.is_stable and ledger.capacity_remaining > 0:
        return None
    return set()


def select_flow_target(
    ledger: FlowLedger,
    cost_table: CostTable,
    next_stage_peers: Mapping[NodeId, float],
    blocked_sinks: Collection[NodeId] = (),
    excluded: Callable[[NodeId], bool] = lambda peer: False,
) -> Optional[FlowTarget]:
    """Cheapest (advertised cost + edge cost) claim the node may make, ties by (peer, sink).

    `blocked_sinks` only limits spare-capacity claims; repairing an unpaired inflow ignores it.
    """
    sinks = eligible_sinks(ledger)
    if sinks is not None and not sinks:
        return None
    best: Optional[FlowTarget] = None
    for peer in sorted(next_stage_peers):
        edge = next_stage_peers[peer]
        if excluded(peer) or math.isinf(edge):
            continue
        for sink, advertised in sorted(cost_table.entries(peer).items()):
            if sinks is None and sink in blocked_sinks:
                continue
            if sinks is not None and sink not in sinks:
                continue
            total = advertised + edge
            if best is None or total < best.total_cost - COST_EPSILON:
                best = FlowTarget(peer, sink, advertised, total)
    return best


def handle_request_flow(
    ledger: FlowLedger,
    requester: NodeId,
    requester_flow: int,
    sink: NodeId,
    expected_cost: float,
    epsilon: float = COST_EPSILON,
) -> Union[Approve, Reject]:
    record = ledger.claimable(sink, expected_cost, epsilon)
    if record is None:
        return Reject(sink, ledger.advertised_cost(sink))
    record.upstream = requester
    record.upstream_flow = requester_flow
    return Approve(record.flow_id, sink, record.cost_to_sink)


def on_flow_approved(
    ledger: FlowLedger,
    approver: NodeId,
    approval: Approve,
    edge_cost: float,
    new_flow_id: int,
    merge_flow: Optional[int] = None,
    current_round: int = 0,
) -> Tuple[FlowRecord, float]:
    """Record the new outflow; returns it with the node's fresh advertised cost for the sink"""
    if ledger.capacity_remaining <= 0:
        raise CapacityExhausted(ledger.owner)
    cost = edge_cost + approval.cost
    record = ledger.get(merge_flow) if merge_flow is not None else None
    if record is not None and record.downstream is None and record.sink == approval.sink:
        record.downstream = approver
        record.downstream_flow = approval.flow_id
        record.cost_to_sink = cost
    else:
        record = ledger.add(FlowRecord(
            flow_id=new_flow_id,
            sink=approval.sink,
            cost_to_sink=cost,
            downstream=approver,
            downstream_flow=approval.flow_id,
            kind=SOURCE if ledger.is_data else RELAY,
            since_round=current_round,
        ))
    return record, ledger.advertised_cost(approval.sink)


# ============================================================
# CHANGE
# ============================================================

def evaluate_change(
    mine: EdgeView,
    other: EdgeView,
    swapped_mine: float,
    swapped_other: float,
    annealer: AnnealerState,
    u: float,
) -> Optional[ChangeProposal]:
    """Swap downstreams of two same-stage edges on the max edge-cost criterion"""
    if mine.sink != other.sink or mine.downstream == other.downstream or mine.node == other.node:
        return None
    if math.isinf(swapped_mine) or math.isinf(swapped_other):
        return None
    current = max(mine.edge_cost, other.edge_cost)
    new = max(swapped_mine, swapped_other)
    if abs(new - current) <= COST_EPSILON:
        return None
    if new < current or annealing_accept(current, new, annealer.temperature, u):
        return ChangeProposal(mine, other, current, new)
    return None


@dataclass(frozen=True)
class ChangeRequest:
    """What the responder sees: the proposer's edge, the swap costs and the max it scored"""

    proposer_edge: float
    proposer_downstream: NodeId
    proposer_downstream_flow: int
    proposer_downstream_cost: float
    cross_cost: float
    flow_id: int
    downstream: NodeId
    downstream_flow: int
    sink: NodeId
    proposed_cost: Optional[float] = None


def handle_request_change(
    ledger: FlowLedger,
    request: ChangeRequest,
    own_cost: Callable[[NodeId], float],
) -> Optional[FlowRecord]:
    """Apply the swap at the responder on the same max edge-cost criterion the proposer used.

    An uphill swap the proposer's annealer accepted goes through when the responder
    reaches the same new max from its own edge costs.
    """
    record = ledger.get(request.flow_id)
    if record is None or not record.is_paired or record.sink != request.sink:
        return None
    if record.downstream != request.downstream or record.downstream_flow != request.downstream_flow:
        return None
    edge_to_q = own_cost(record.downstream)
    edge_to_j = own_cost(request.proposer_downstream)
    if math.isinf(edge_to_j):
        return None
    current = max(request.proposer_edge, edge_to_q)
    new = max(request.cross_cost, edge_to_j)
    agreed = request.proposed_cost is not None and abs(new - request.proposed_cost) <= COST_EPSILON
    if new >= current - COST_EPSILON and not agreed:
        return None
    record.downstream = request.proposer_downstream
    record.downstream_flow = request.proposer_downstream_flow
    record.cost_to_sink = edge_to_j + request.proposer_downstream_cost
    return record


# ============================================================
# REDIRECT
# ============================================================

def evaluate_redirect(
    segment: Segment,
    cost_as: float,
    cost_sc: float,
    capacity_remaining: int,
    annealer: AnnealerState,
    u: float,
) -> Optional[RedirectProposal]:
    """Route a -> c through the caller instead of b"""
    if capacity_remaining <= 0 or math.isinf(cost_as) or math.isinf(cost_sc):
        return None
    proposal = RedirectProposal(segment, cost_as, cost_sc)
    if abs(proposal.gain) <= COST_EPSILON:
        return None
    if proposal.gain > 0 or annealing_accept(proposal.cost_current, proposal.cost_new, annealer.temperature, u):
        return proposal
    return None


# ============================================================
# STEADY STATE
# ============================================================

def steady_state(change_histories: Iterable[Sequence[int]], current_round: int, window: int) -> bool:
    """True once `window` rounds have passed with no pairing change anywhere"""
    if current_round < window:
        return False
    cutoff = current_round - window
    for history in change_histories:
        if history and max(history) > cutoff:
            return False
    return True
