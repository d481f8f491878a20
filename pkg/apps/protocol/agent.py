# ===== apps/protocol/agent.py =====
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

from apps.domain.types import NodeId
from apps.domain.validation import NEXT, PREV, SAME
from apps.simnet.messages import Message, MessageType

from .annealing import DEFAULT_ALPHA, DEFAULT_T0, AnnealerState
from .exceptions import CapacityExhausted
from .ledger import COST_EPSILON, SINK, CostTable, FlowLedger, FlowRecord
from .operations import (
    Approve,
    ChangeRequest,
    EdgeView,
    Segment,
    evaluate_change,
    evaluate_redirect,
    handle_request_change,
    handle_request_flow,
    on_flow_approved,
    select_flow_target,
)

logger = logging.getLogger(__name__)

FLOW_ID_SPAN = 1_000_000
MAX_INCARNATIONS = 1000


@dataclass(frozen=True)
class ProtocolConfig:
    t0: float = DEFAULT_T0
    alpha: float = DEFAULT_ALPHA
    window: int = 5
    release_after: int = 6
    probe_backoff: int = 3
    demand_ttl: int = 10
    request_timeout: int = 2
    refresh_every: int = 5
    optimize: bool = True


class FlowAgent:
    """Message-driven flow construction for one node.

    `world` provides `send(src, type, dst, payload)`, `edge_cost(a, b)` and
    `peers(node, direction)`; everything else the agent learns from messages.
    """

    HANDLED = frozenset({
        MessageType.REQUEST_FLOW, MessageType.APPROVE, MessageType.REJECT,
        MessageType.COST_BROADCAST, MessageType.COST_UPDATE, MessageType.CANCEL_FLOW,
        MessageType.NEW_UPSTREAM, MessageType.NEW_DOWNSTREAM, MessageType.STAGE_GOSSIP,
        MessageType.REQUEST_CHANGE, MessageType.CHANGE_ACCEPT, MessageType.CHANGE_DECLINE,
        MessageType.REQUEST_REDIRECT, MessageType.REDIRECT_ACCEPT, MessageType.REDIRECT_DECLINE,
    })

    def __init__(self, node_id: NodeId, stage: Optional[int], capacity: int, is_data: bool,
                 world, config: ProtocolConfig = ProtocolConfig(), rng=None, incarnation: int = 0):
        self.node_id = node_id
        self.stage = stage
        self.is_data = is_data
        self.world = world
        self.config = config
        self.rng = rng
        self.incarnation = incarnation % MAX_INCARNATIONS

        self.ledger = FlowLedger(node_id, capacity, is_data)
        self.costs = CostTable(node_id)
        self.annealer = AnnealerState(config.t0, config.alpha)

        self.round = 0
        self.pending: Optional[dict] = None
        self.backoff_until = -1
        self.change_rounds: List[int] = []
        self.suppressed: set = set()
        self.demand: Dict[NodeId, int] = {}
        self.probed: Dict[tuple, int] = {}
        self.gossip: Dict[NodeId, dict] = {}
        self.known_prev: set = set()
        self.last_advertised: Dict[NodeId, float] = {}
        self.cancelled: Dict[int, int] = {}
        self._flow_counter = 0

        self.busy: Callable[[], bool] = lambda: False
        self.excluded: Callable[[NodeId], bool] = lambda peer: False
        self.on_timeout: Callable[[NodeId], None] = lambda peer: None

        if is_data:
            for _ in range(capacity):
                self.ledger.add(FlowRecord(self.new_flow_id(), node_id, 0.0, kind=SINK))

    # ============================================================
    # HELPERS
    # ============================================================

    def new_flow_id(self) -> int:
        self._flow_counter += 1
        return (self.node_id * MAX_INCARNATIONS + self.incarnation) * FLOW_ID_SPAN + self._flow_counter

    def send(self, mtype: MessageType, dst: NodeId, **payload):
        self.world.send(self.node_id, mtype, dst, payload)

    def edge(self, a: NodeId, b: NodeId) -> float:
        return self.world.edge_cost(a, b)

    def mark_change(self):
        if not self.change_rounds or self.change_rounds[-1] != self.round:
            self.change_rounds.append(self.round)

    def reset_temperature(self):
        self.annealer.reset()

    def advertise(self, force: bool = False):
        current = self.ledger.advertised()
        changed = {
            sink: current.get(sink, math.inf)
            for sink in set(current) | set(self.last_advertised)
            if force or abs(current.get(sink, math.inf) - self.last_advertised.get(sink, math.inf)) > COST_EPSILON
            or math.isinf(current.get(sink, math.inf)) != math.isinf(self.last_advertised.get(sink, math.inf))
        }
        self.last_advertised = current
        if not changed:
            return
        for peer in sorted(self.world.peers(self.node_id, PREV)):
            for sink in sorted(changed):
                self.send(MessageType.COST_BROADCAST, peer, sink=sink, cost=changed[sink])

    def _propagate_cost(self, record: FlowRecord):
        if record.upstream is not None:
            self.send(MessageType.COST_UPDATE, record.upstream, flow=record.upstream_flow, cost=record.cost_to_sink)

    def _lose_upstream(self, record: FlowRecord):
        record.upstream = None
        record.upstream_flow = None
        if not self.is_data and record.downstream is None:
            self.ledger.remove(record.flow_id)
        else:
            record.since_round = self.round
        self.mark_change()

    def _lose_downstream(self, record: FlowRecord):
        record.downstream = None
        record.downstream_flow = None
        if self.is_data or record.upstream is None:
            self.ledger.remove(record.flow_id)
        else:
            record.since_round = self.round
        self.mark_change()

    def drop_peer(self, peer: NodeId):
        """Forget a peer detected as crashed; affected records become unpaired"""
        for record in list(self.ledger.records.values()):
            if record.upstream == peer:
                self._lose_upstream(record)
            elif record.downstream == peer:
                self._lose_downstream(record)
        self.costs.forget(peer)
        self.gossip.pop(peer, None)
        if self.pending and self.pending["peer"] == peer:
            self.pending = None
        self.advertise()

    def detach_downstream(self, flow_id: int):
        """Give up the downstream of one record after a DENY from it"""
        record = self.ledger.get(flow_id)
        if record is None or record.downstream is None:
            return
        self.send(MessageType.CANCEL_FLOW, record.downstream, flow=record.downstream_flow, upstream=self.node_id)
        self._lose_downstream(record)
        self.advertise()

    def reroute(self, peer: NodeId, sink: NodeId, expected_cost: float, flow_id: int) -> bool:
        """Claim a new downstream for an existing record; False while another request is open"""
        if self.pending is not None:
            return False
        self.send(MessageType.REQUEST_FLOW, peer, sink=sink, expected_cost=expected_cost, flow=flow_id)
        self.pending = {"kind": "request", "peer": peer, "sink": sink, "flow": flow_id,
                        "merge": flow_id, "round": self.round, "retried": False}
        return True

    def record_peers(self) -> set:
        peers = set()
        for record in self.ledger.records.values():
            peers.update(p for p in (record.upstream, record.downstream) if p is not None)
        return peers

    # ============================================================
    # ROUND
    # ============================================================

    def on_round(self, round_index: int):
        self.round = round_index
        self._expire_pending()
        self._prune()
        if not self.is_data:
            self._release_dangling()
            if self.ledger.unpaired_inflow or self.ledger.unpaired_outflow:
                self.mark_change()
        prev = set(self.world.peers(self.node_id, PREV))
        if prev - self.known_prev:
            self.suppressed.clear()
        self.known_prev = prev
        self.advertise(force=round_index % self.config.refresh_every == 0)
        if not self.is_data and self.config.optimize:
            self._send_gossip()
        if self.pending is None and round_index >= self.backoff_until:
            self._act()

    def _prune(self):
        self.demand = {sink: until for sink, until in self.demand.items() if until >= self.round}
        self.probed = {key: at for key, at in self.probed.items()
                       if at + self.config.probe_backoff > self.round}
        self.cancelled = {flow: at for flow, at in self.cancelled.items()
                          if self.round - at < self.config.request_timeout}

    def _expire_pending(self):
        if self.pending and self.round - self.pending["round"] >= self.config.request_timeout:
            logger.debug(f"Node {self.node_id}: {self.pending['kind']} to {self.pending['peer']} timed out")
            self.on_timeout(self.pending["peer"])
            self.pending = None

    def _release_dangling(self):
        for record in self.ledger.unpaired_outflow:
            if self.round - record.since_round >= self.config.release_after:
                self.send(MessageType.CANCEL_FLOW, record.downstream, flow=record.downstream_flow)
                self.ledger.remove(record.flow_id)
                self.suppressed.add(record.sink)
                self.mark_change()
        for record in self.ledger.unpaired_inflow:
            if self.round - record.since_round >= self.config.release_after:
                self.send(MessageType.NEW_DOWNSTREAM, record.upstream, flow=record.upstream_flow,
                          downstream=None, downstream_flow=None, cost=math.inf)
                self.ledger.remove(record.flow_id)
                self.mark_change()

    def _send_gossip(self):
        peers = sorted(self.world.peers(self.node_id, SAME))
        if not peers:
            return
        edges = [
            {
                "flow": r.flow_id, "sink": r.sink, "cost": r.cost_to_sink,
                "upstream": r.upstream, "upstream_flow": r.upstream_flow,
                "downstream": r.downstream, "downstream_flow": r.downstream_flow,
                "up_edge": self.edge(r.upstream, self.node_id),
                "down_edge": self.edge(self.node_id, r.downstream),
            }
            for r in self.ledger.paired
        ]
        next_costs = {p: self.edge(self.node_id, p) for p in self.world.peers(self.node_id, NEXT)}
        for peer in peers:
            self.send(MessageType.STAGE_GOSSIP, peer, edges=edges, next_costs=next_costs,
                      capacity=self.ledger.capacity_remaining)

    def _act(self):
        peers = sorted(self.world.peers(self.node_id, NEXT))
        edges = {p: self.edge(self.node_id, p) for p in peers}
        active_demand = {s for s, until in self.demand.items() if until >= self.round}
        blocked = self.suppressed - active_demand
        target = select_flow_target(self.ledger, self.costs, edges, blocked, self.excluded)
        if target is not None:
            self._request(target.peer, target.sink, target.expected_cost)
            return
        if self._probe(peers, edges, active_demand):
            return
        if (not self.is_data and self.config.optimize and not self.busy()
                and self.round % 3 == self.stage % 3):
            self._propose_structural()

    def _request(self, peer: NodeId, sink: NodeId, expected_cost: float, retried: bool = False):
        merge = next((r.flow_id for r in self.ledger.unpaired_inflow if r.sink == sink), None)
        flow = merge if merge is not None else self.new_flow_id()
        self.send(MessageType.REQUEST_FLOW, peer, sink=sink, expected_cost=expected_cost, flow=flow)
        self.pending = {"kind": "request", "peer": peer, "sink": sink, "flow": flow,
                        "merge": merge, "round": self.round, "retried": retried}

    def _probe(self, peers, edges, active_demand) -> bool:
        if self.is_data:
            sinks = {self.node_id} if self.ledger.capacity_remaining > 0 else set()
        else:
            sinks = {r.sink for r in self.ledger.unpaired_inflow}
            if self.ledger.capacity_remaining > 0:
                sinks |= active_demand
        for sink in sorted(sinks):
            candidates = sorted(
                (edges[p], p) for p in peers
                if not self.excluded(p) and not math.isinf(edges[p])
                and self.probed.get((p, sink), -math.inf) + self.config.probe_backoff <= self.round
            )
            if not candidates:
                continue
            peer = candidates[0][1]
            self.probed[(peer, sink)] = self.round
            self.send(MessageType.REQUEST_FLOW, peer, sink=sink, expected_cost=math.inf, flow=None)
            self.pending = {"kind": "probe", "peer": peer, "sink": sink, "flow": None,
                            "merge": None, "round": self.round, "retried": True}
            return True
        return False

    # ============================================================
    # STRUCTURAL PROPOSALS
    # ============================================================

    def _propose_structural(self):
        u = float(self.rng.random()) if self.rng is not None else 0.5
        options = []
        for peer in sorted(self.gossip):
            view = self.gossip[peer]
            for entry in sorted(view["edges"], key=lambda e: e["flow"]):
                options.extend(self._change_options(peer, view, entry, u))
                redirect = self._redirect_option(peer, entry, u)
                if redirect is not None:
                    options.append(redirect)
        if not options:
            return
        options.sort(key=lambda o: -o[0])
        _, kind, proposal, peer = options[0]
        if kind == "change":
            self._send_change(proposal, peer)
        else:
            self._send_redirect(proposal, peer)

    def _change_options(self, peer, view, entry, u):
        found = []
        if self.excluded(peer) or self.excluded(entry["downstream"]):
            return found
        other = EdgeView(peer, entry["flow"], entry["downstream"], entry["downstream_flow"],
                         entry["sink"], entry["down_edge"], entry["cost"] - entry["down_edge"])
        for record in self.ledger.paired:
            edge = self.edge(self.node_id, record.downstream)
            mine = EdgeView(self.node_id, record.flow_id, record.downstream, record.downstream_flow,
                            record.sink, edge, record.cost_to_sink - edge)
            swapped_mine = self.edge(self.node_id, other.downstream)
            swapped_other = view["next_costs"].get(mine.downstream, math.inf)
            proposal = evaluate_change(mine, other, swapped_mine, swapped_other, self.annealer, u)
            if proposal is not None:
                found.append((proposal.gain, "change", proposal, peer))
        return found

    def _redirect_option(self, peer, entry, u):
        if self.ledger.capacity_remaining <= 0 or not self.ledger.is_stable:
            return None
        a, c = entry["upstream"], entry["downstream"]
        if self.excluded(a) or self.excluded(c):
            return None
        segment = Segment(a, entry["upstream_flow"], peer, entry["flow"], c, entry["downstream_flow"],
                          entry["sink"], entry["up_edge"], entry["down_edge"])
        proposal = evaluate_redirect(segment, self.edge(a, self.node_id), self.edge(self.node_id, c),
                                     self.ledger.capacity_remaining, self.annealer, u)
        if proposal is None:
            return None
        return proposal.gain, "redirect", proposal, peer

    def _send_change(self, proposal, peer):
        mine, other = proposal.mine, proposal.other
        self.send(
            MessageType.REQUEST_CHANGE, peer,
            flow=other.flow_id, downstream=other.downstream, downstream_flow=other.downstream_flow,
            sink=mine.sink, my_flow=mine.flow_id, my_down=mine.downstream,
            my_down_flow=mine.downstream_flow, my_edge=mine.edge_cost, my_down_cost=mine.downstream_cost,
            cross_cost=self.edge(self.node_id, other.downstream), gain=proposal.gain,
            proposed_cost=proposal.cost_new,
        )
        self.pending = {"kind": "change", "peer": peer, "sink": mine.sink, "flow": mine.flow_id,
                        "merge": None, "round": self.round, "retried": True}

    def _send_redirect(self, proposal, peer):
        seg = proposal.segment
        new_flow = self.new_flow_id()
        self.send(
            MessageType.REQUEST_REDIRECT, peer,
            flow=seg.b_flow, a=seg.a, a_flow=seg.a_flow, c=seg.c, c_flow=seg.c_flow,
            sink=seg.sink, new_flow=new_flow, cost_sc=proposal.cost_sc, gain=proposal.gain,
        )
        self.pending = {"kind": "redirect", "peer": peer, "sink": seg.sink, "flow": new_flow,
                        "merge": None, "round": self.round, "retried": True}

    # ============================================================
    # MESSAGE HANDLERS
    # ============================================================

    def handle(self, message: Message) -> bool:
        if message.type not in self.HANDLED:
            return False
        handler = getattr(self, f"_on_{message.type.value.lower()}")
        handler(message)
        return True

    def _pending_matches(self, kind: str, peer: NodeId) -> bool:
        return bool(self.pending) and self.pending["kind"] == kind and self.pending["peer"] == peer

    def _on_request_flow(self, msg: Message):
        sink, expected = msg.get("sink"), msg.get("expected_cost")
        result = handle_request_flow(self.ledger, msg.src, msg.get("flow"), sink, expected) \
            if msg.get("flow") is not None else None
        if isinstance(result, Approve):
            self.mark_change()
            self.send(MessageType.APPROVE, msg.src, flow=result.flow_id, sink=sink,
                      cost=result.cost, req_flow=msg.get("flow"))
            self.advertise()
            return
        self.suppressed.discard(sink)
        if math.isinf(expected) and not self.is_data and self.ledger.capacity_remaining > 0:
            self.demand[sink] = self.round + self.config.demand_ttl
        self.send(MessageType.REJECT, msg.src, sink=sink, current_cost=self.ledger.advertised_cost(sink))

    def _on_approve(self, msg: Message):
        pending = self.pending
        if not (self._pending_matches("request", msg.src) and pending["flow"] == msg.get("req_flow")):
            logger.debug(f"Node {self.node_id}: late approval from {msg.src}, cancelling")
            self.send(MessageType.CANCEL_FLOW, msg.src, flow=msg.get("flow"))
            return
        self.pending = None
        approval = Approve(msg.get("flow"), msg.get("sink"), msg.get("cost"))
        try:
            record, _ = on_flow_approved(self.ledger, msg.src, approval, self.edge(self.node_id, msg.src),
                                         new_flow_id=pending["flow"], merge_flow=pending["merge"],
                                         current_round=self.round)
        except CapacityExhausted:
            logger.warning(f"Node {self.node_id}: approval from {msg.src} arrived with no capacity left")
            self.send(MessageType.CANCEL_FLOW, msg.src, flow=approval.flow_id)
            return
        self.mark_change()
        self._propagate_cost(record)
        self.advertise()

    def _on_reject(self, msg: Message):
        sink = msg.get("sink")
        self.costs.update(msg.src, sink, msg.get("current_cost"))
        pending = self.pending
        if not pending or pending["peer"] != msg.src or pending["sink"] != sink \
                or pending["kind"] not in ("request", "probe"):
            return
        self.pending = None
        current = msg.get("current_cost")
        if pending["kind"] == "request" and not pending["retried"] and not math.isinf(current):
            self._request(msg.src, sink, current, retried=True)
        else:
            self.backoff_until = self.round + 1

    def _on_cost_broadcast(self, msg: Message):
        self.costs.update(msg.src, msg.get("sink"), msg.get("cost"))

    def _on_cost_update(self, msg: Message):
        record = self.ledger.get(msg.get("flow"))
        if record is None or record.downstream != msg.src:
            return
        cost = self.edge(self.node_id, msg.src) + msg.get("cost")
        if abs(cost - record.cost_to_sink) <= 1e-12:
            return
        record.cost_to_sink = cost
        self._propagate_cost(record)
        self.advertise()

    def _on_cancel_flow(self, msg: Message):
        record = self.ledger.get(msg.get("flow"))
        if record is None:
            self.cancelled[msg.get("flow")] = self.round
            return
        if record.upstream != msg.get("upstream", msg.src):
            return
        self._lose_upstream(record)
        self.advertise()

    def _on_new_upstream(self, msg: Message):
        record = self.ledger.get(msg.get("flow"))
        upstream, upstream_flow = msg.get("upstream"), msg.get("upstream_flow")
        if record is None:
            self.send(MessageType.NEW_DOWNSTREAM, upstream, flow=upstream_flow,
                      downstream=None, downstream_flow=None, cost=math.inf)
            return
        record.upstream = upstream
        record.upstream_flow = upstream_flow
        self.mark_change()
        self._propagate_cost(record)
        self.advertise()

    def _on_new_downstream(self, msg: Message):
        record = self.ledger.get(msg.get("flow"))
        downstream, downstream_flow = msg.get("downstream"), msg.get("downstream_flow")
        if record is None:
            if downstream is not None:
                self.send(MessageType.CANCEL_FLOW, downstream, flow=downstream_flow)
            return
        if downstream is None:
            if record.downstream == msg.src:
                self._lose_downstream(record)
                self.advertise()
            return
        record.downstream = downstream
        record.downstream_flow = downstream_flow
        record.cost_to_sink = self.edge(self.node_id, downstream) + msg.get("cost")
        self.mark_change()
        self._propagate_cost(record)
        self.advertise()

    def _on_stage_gossip(self, msg: Message):
        self.gossip[msg.src] = {"edges": msg.get("edges", []), "next_costs": msg.get("next_costs", {}),
                                "capacity": msg.get("capacity", 0), "round": self.round}

    def _on_request_change(self, msg: Message):
        record = self.ledger.get(msg.get("flow"))
        if self.pending is not None or self.busy() or record is None or record.downstream is None:
            self.send(MessageType.CHANGE_DECLINE, msg.src, my_flow=msg.get("my_flow"))
            return
        old_down, old_down_flow = record.downstream, record.downstream_flow
        cost_q = record.cost_to_sink - self.edge(self.node_id, old_down)
        request = ChangeRequest(
            proposer_edge=msg.get("my_edge"), proposer_downstream=msg.get("my_down"),
            proposer_downstream_flow=msg.get("my_down_flow"), proposer_downstream_cost=msg.get("my_down_cost"),
            cross_cost=msg.get("cross_cost"), flow_id=msg.get("flow"), downstream=msg.get("downstream"),
            downstream_flow=msg.get("downstream_flow"), sink=msg.get("sink"), proposed_cost=msg.get("proposed_cost"),
        )
        if handle_request_change(self.ledger, request, lambda peer: self.edge(self.node_id, peer)) is None:
            self.send(MessageType.CHANGE_DECLINE, msg.src, my_flow=msg.get("my_flow"))
            return
        self.send(MessageType.NEW_UPSTREAM, record.downstream, flow=record.downstream_flow,
                  upstream=self.node_id, upstream_flow=record.flow_id)
        self._propagate_cost(record)
        self.send(MessageType.CHANGE_ACCEPT, msg.src, my_flow=msg.get("my_flow"), my_down=msg.get("my_down"),
                  my_down_flow=msg.get("my_down_flow"), down=old_down, down_flow=old_down_flow, down_cost=cost_q)
        self.mark_change()

    def _on_change_accept(self, msg: Message):
        if self._pending_matches("change", msg.src):
            self.pending = None
        record = self.ledger.get(msg.get("my_flow"))
        if record is None or record.downstream != msg.get("my_down") \
                or record.downstream_flow != msg.get("my_down_flow"):
            logger.warning(f"Node {self.node_id}: change accepted by {msg.src} for a flow that moved on")
            self.send(MessageType.CANCEL_FLOW, msg.get("down"), flow=msg.get("down_flow"), upstream=msg.src)
            return
        record.downstream = msg.get("down")
        record.downstream_flow = msg.get("down_flow")
        record.cost_to_sink = self.edge(self.node_id, record.downstream) + msg.get("down_cost")
        self.send(MessageType.NEW_UPSTREAM, record.downstream, flow=record.downstream_flow,
                  upstream=self.node_id, upstream_flow=record.flow_id)
        self._propagate_cost(record)
        self.annealer.cool()
        self.mark_change()

    def _on_change_decline(self, msg: Message):
        if self._pending_matches("change", msg.src):
            self.pending = None
            self.backoff_until = self.round + 1

    def _on_request_redirect(self, msg: Message):
        record = self.ledger.get(msg.get("flow"))
        valid = (
            self.pending is None and not self.busy() and record is not None and record.is_paired
            and record.upstream == msg.get("a") and record.upstream_flow == msg.get("a_flow")
            and record.downstream == msg.get("c") and record.downstream_flow == msg.get("c_flow")
        )
        if not valid:
            self.send(MessageType.REDIRECT_DECLINE, msg.src, new_flow=msg.get("new_flow"))
            return
        cost_c = record.cost_to_sink - self.edge(self.node_id, record.downstream)
        self.ledger.remove(record.flow_id)
        new_flow = msg.get("new_flow")
        self.send(MessageType.REDIRECT_ACCEPT, msg.src, new_flow=new_flow, a=record.upstream,
                  a_flow=record.upstream_flow, c=record.downstream, c_flow=record.downstream_flow,
                  sink=record.sink, cost_c=cost_c)
        self.send(MessageType.NEW_DOWNSTREAM, record.upstream, flow=record.upstream_flow,
                  downstream=msg.src, downstream_flow=new_flow, cost=msg.get("cost_sc") + cost_c)
        self.send(MessageType.NEW_UPSTREAM, record.downstream, flow=record.downstream_flow,
                  upstream=msg.src, upstream_flow=new_flow)
        self.mark_change()
        self.advertise()

    def _on_redirect_accept(self, msg: Message):
        if self._pending_matches("redirect", msg.src):
            self.pending = None
        new_flow, a, c = msg.get("new_flow"), msg.get("a"), msg.get("c")
        if self.ledger.capacity_remaining <= 0:
            logger.warning(f"Node {self.node_id}: redirect accepted by {msg.src} with no capacity left, unwinding")
            self.send(MessageType.NEW_DOWNSTREAM, a, flow=msg.get("a_flow"),
                      downstream=None, downstream_flow=None, cost=math.inf)
            self.send(MessageType.CANCEL_FLOW, c, flow=msg.get("c_flow"))
            return
        record = FlowRecord(
            flow_id=new_flow, sink=msg.get("sink"),
            cost_to_sink=self.edge(self.node_id, c) + msg.get("cost_c"),
            upstream=a, upstream_flow=msg.get("a_flow"), downstream=c, downstream_flow=msg.get("c_flow"),
            since_round=self.round,
        )
        if self.cancelled.pop(new_flow, None) is not None:
            record.upstream = record.upstream_flow = None
        self.ledger.add(record)
        self.annealer.cool()
        self.mark_change()
        self.advertise()

    def _on_redirect_decline(self, msg: Message):
        if self._pending_matches("redirect", msg.src):
            self.pending = None
            self.backoff_until = self.round + 1
