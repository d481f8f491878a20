# ===== apps/lifecycle/peer.py =====
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from apps.domain.types import NodeId, NodeSpec
from apps.domain.validation import NEXT, PREV
from apps.membership.admission import UtilizationEntry, UtilizationFlood, entries_from_payload, entries_to_payload
from apps.oracle.exceptions import NoAvailableSuccessor
from apps.oracle.greedy import greedy_route
from apps.protocol.agent import FlowAgent, ProtocolConfig
from apps.recovery.detection import (
    DEFAULT_GAMMA,
    DEFAULT_K,
    Deny,
    ExclusionList,
    ExclusionReason,
    PeerStats,
    observe_complete,
    on_forward_timeout,
)
from apps.recovery.repair import GWTF
from apps.simnet.messages import Message, MessageType

from .exceptions import MissingActivation, NoDownstream, NotInPhase
from .params import DEFAULT_DIM, DEFAULT_ETA, Phase, StageParams

logger = logging.getLogger(__name__)

GREEDY = "greedy"
FORWARD = "forward"
BACKWARD = "backward"


@dataclass(frozen=True)
class RuntimeConfig:
    routing: str = GWTF
    recovery: str = GWTF
    microbatches: int = 4
    iterations: int = 1
    k: float = DEFAULT_K
    gamma: float = DEFAULT_GAMMA
    eta: float = DEFAULT_ETA
    dim: int = DEFAULT_DIM
    seed: int = 0
    window: int = 5
    max_formation_rounds: int = 120
    reroute_patience: int = 2
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)


@dataclass
class StoredActivation:
    """What a node keeps for one microbatch until its iteration ends"""

    microbatch: int
    origin: NodeId
    iteration: int
    attempt: int
    upstream: Optional[NodeId]
    flow: Optional[int]
    path: List[NodeId]
    downstream: Optional[NodeId] = None
    computed: bool = False
    backward_from: Optional[NodeId] = None
    backward_started: bool = False
    has_gradient: bool = False
    repair_path: Optional[List[NodeId]] = None
    repair_index: int = 0


@dataclass
class Expectation:
    peer: NodeId
    sent_at: float
    token: int


class PeerNode:
    """Event-driven state machine of one node during training.

    The `world` runs the clock and the network; see apps.harness.simulation.
    """

    def __init__(self, spec: NodeSpec, world, config: RuntimeConfig = RuntimeConfig(), rng=None,
                 incarnation: int = 0, iteration: int = 0, routable_from: int = 0):
        self.node_id = spec.id
        self.stage = spec.stage
        self.is_data = spec.is_data
        self.capacity = spec.capacity
        self.compute_cost = spec.compute_cost
        self.world = world
        self.config = config

        self.stats = PeerStats(config.gamma, config.k)
        self.exclusion = ExclusionList()
        self.params = StageParams(self.stage, config.seed, config.dim)
        self.agent: Optional[FlowAgent] = None
        if config.routing != GREEDY:
            self.agent = FlowAgent(self.node_id, self.stage, self.capacity, self.is_data, world,
                                   config.protocol, rng, incarnation)
            self.agent.busy = self.is_busy
            self.agent.excluded = lambda peer: peer in self.exclusion

        self.iteration = iteration
        self.routable_from = routable_from
        self.phase = Phase.FORMATION
        self.round = 0

        self.activations: Dict[int, StoredActivation] = {}
        self.expecting: Dict[tuple, Expectation] = {}
        self.parked: Dict[int, int] = {}
        self.buffered: List[Message] = []
        self.denied: set = set()
        self.load: Counter = Counter()
        self.pings: Dict[int, NodeId] = {}
        self._token = 0

        self.aggregating = False
        self.aggregation_members: List[NodeId] = []
        self.shares: Dict[int, Dict[NodeId, np.ndarray]] = defaultdict(dict)
        self.aggregated_at: Dict[int, float] = {}
        self.downstream_ready: set = set()
        self.can_take_sent: set = set()
        self.floods: Dict[int, UtilizationFlood] = {}

    # ============================================================
    # HELPERS
    # ============================================================

    @property
    def is_last_stage(self) -> bool:
        return not self.is_data and self.stage == self.world.num_stages - 1

    def is_busy(self) -> bool:
        return bool(self.parked) or any(not a.has_gradient for a in self.activations.values())

    def send(self, mtype: MessageType, dst: NodeId, size: float = 0.0, **payload):
        self.world.send(self.node_id, mtype, dst, payload, size=size)

    def next_token(self) -> int:
        self._token += 1
        return self._token

    def default_threshold(self, peer: NodeId) -> float:
        edge = self.world.edge_cost(self.node_id, peer)
        if math.isinf(edge):
            return self.config.k * self.world.round_interval
        return self.config.k * (2 * edge + 2 * self.world.jitter)

    def threshold(self, peer: NodeId) -> float:
        return self.stats.threshold(peer, self.default_threshold(peer))

    def expect(self, microbatch: int, phase: str, peer: NodeId, extra: float = 0.0):
        token = self.next_token()
        self.expecting[(microbatch, phase)] = Expectation(peer, self.world.now, token)
        self.world.timer(self.node_id, self.threshold(peer) + extra, "expect",
                         mb=microbatch, phase=phase, token=token)

    def cancel_expectations(self, microbatch: int):
        self.expecting.pop((microbatch, FORWARD), None)
        self.expecting.pop((microbatch, BACKWARD), None)

    # ============================================================
    # EVENT ENTRY POINTS
    # ============================================================

    def on_tick(self, round_index: int):
        self.round = round_index
        if self.agent is not None and self.iteration >= self.routable_from:
            self.agent.on_round(round_index)
        self.check_parked()

    def on_message(self, msg: Message):
        if self.agent is not None and self.agent.handle(msg):
            self.check_parked()
            return
        handler = getattr(self, f"_on_{msg.type.value.lower()}", None)
        if handler is None:
            logger.debug(f"Node {self.node_id} ignores {msg.type.value} from {msg.src}")
            return
        handler(msg)

    def on_timer(self, payload: dict):
        getattr(self, f"_timer_{payload['name']}")(payload)

    def on_compute_done(self, payload: dict):
        stored = self.activations.get(payload["mb"])
        if stored is None or stored.attempt != payload["attempt"]:
            return
        self.world.record_work(self.node_id, stored.microbatch, payload["name"], payload["duration"],
                               stored.attempt, stored.iteration)
        getattr(self, f"_computed_{payload['name']}")(stored)

    # ============================================================
    # FORWARD PASS
    # ============================================================

    def _admits(self, msg: Message) -> bool:
        if self.agent is None:
            return msg.get("mb") in self.activations or len(self.activations) < self.capacity
        return self.agent.ledger.get(msg.get("flow")) is not None

    def _on_activation(self, msg: Message):
        mb, iteration, attempt = msg.get("mb"), msg.get("iteration"), msg.get("attempt")
        if iteration > self.iteration:
            self.buffered.append(msg)
            self.send(MessageType.COMPLETE, msg.src, mb=mb, attempt=attempt, phase=FORWARD, held=True)
            return
        if iteration < self.iteration:
            return
        existing = self.activations.get(mb)
        if existing is not None and existing.attempt >= attempt:
            return
        if not self._admits(msg):
            logger.warning(f"Node {self.node_id} full, denying microbatch {mb} from {msg.src}")
            self.world.counters["deny"] += 1
            self.denied.add(msg.src)
            self.send(MessageType.DENY, msg.src, mb=mb, attempt=attempt)
            return
        self.process_forward(mb, msg.get("origin"), iteration, attempt, msg.src, msg.get("flow"), msg.get("path"))

    def process_forward(self, microbatch: int, origin: NodeId, iteration: int, attempt: int,
                        upstream: Optional[NodeId], flow: Optional[int], path) -> StoredActivation:
        if self.phase == Phase.AGGREGATION:
            raise NotInPhase(self.node_id, Phase.FORWARD, self.phase)
        self.phase = Phase.FORWARD
        stored = StoredActivation(microbatch, origin, iteration, attempt, upstream, flow,
                                  list(path) + [self.node_id])
        self.activations[microbatch] = stored
        self.world.compute(self.node_id, self.compute_cost, FORWARD, mb=microbatch, attempt=attempt)
        return stored

    def _computed_forward(self, stored: StoredActivation):
        stored.computed = True
        if stored.upstream is not None:
            self.send(MessageType.COMPLETE, stored.upstream, mb=stored.microbatch, attempt=stored.attempt,
                      phase=FORWARD)
        self.forward(stored)

    def next_hop(self, stored: StoredActivation):
        if self.agent is None:
            try:
                peer = greedy_route(self.world.topology, self.node_id, self.load,
                                    excluded=self.exclusion, origin=stored.origin)
            except NoAvailableSuccessor:
                raise NoDownstream(self.node_id, stored.microbatch)
            return peer, None
        record = self.agent.ledger.get(stored.flow)
        if record is None or record.downstream is None or record.downstream in self.exclusion:
            raise NoDownstream(self.node_id, stored.microbatch)
        return record.downstream, record.downstream_flow

    def forward(self, stored: StoredActivation):
        try:
            peer, flow = self.next_hop(stored)
        except NoDownstream as exc:
            logger.debug(str(exc))
            self.reroute(stored, None, ExclusionReason.TIMEOUT)
            return
        self.send_activation(stored, peer, flow)

    def send_activation(self, stored: StoredActivation, peer: NodeId, flow: Optional[int]):
        stored.downstream = peer
        self.load[peer] += 1
        self.send(MessageType.ACTIVATION, peer, size=self.world.activation_size,
                  mb=stored.microbatch, origin=stored.origin, iteration=stored.iteration,
                  attempt=stored.attempt, flow=flow, path=list(stored.path))
        self.expect(stored.microbatch, FORWARD, peer)

    def reroute(self, stored: StoredActivation, stale: Optional[NodeId], reason: ExclusionReason):
        """Forward-pass failure: try another next-stage peer, else DENY upstream"""
        self.world.counters["reroute"] += 1
        if self.agent is None:
            if stale is not None:
                self.exclusion.exclude(stale, reason)
            try:
                peer, flow = self.next_hop(stored)
            except NoDownstream:
                self.deny_upstream(stored)
                return
            self.send_activation(stored, peer, flow)
            return
        self.reroute_flow(stored, stale, reason)

    def _detach(self, stored: StoredActivation, stale: Optional[NodeId], reason: ExclusionReason):
        if stale is None:
            return
        if reason == ExclusionReason.DENY:
            self.agent.detach_downstream(stored.flow)
        else:
            self.agent.drop_peer(stale)

    def reroute_flow(self, stored: StoredActivation, stale: Optional[NodeId], reason: ExclusionReason):
        self._detach(stored, stale, reason)
        next_peers = {p: self.world.edge_cost(self.node_id, p) for p in self.world.peers(self.node_id, NEXT)}
        decision = on_forward_timeout(stale, stored.origin, self.exclusion, self.agent.costs, next_peers, reason)
        if isinstance(decision, Deny):
            self.deny_upstream(stored)
            return
        self.agent.reroute(decision.peer, stored.origin, decision.expected_cost, stored.flow)
        self.parked[stored.microbatch] = self.round + self.config.reroute_patience
        self.check_parked()

    def check_parked(self):
        if self.agent is None:
            return
        for mb in sorted(self.parked):
            stored = self.activations.get(mb)
            if stored is None:
                del self.parked[mb]
                continue
            record = self.agent.ledger.get(stored.flow)
            if record is not None and record.downstream is not None and record.downstream not in self.exclusion:
                del self.parked[mb]
                self.send_activation(stored, record.downstream, record.downstream_flow)
            elif record is None or self.round > self.parked[mb]:
                del self.parked[mb]
                self.deny_upstream(stored)

    def deny_upstream(self, stored: StoredActivation):
        logger.warning(f"Node {self.node_id} has no successor for microbatch {stored.microbatch}, "
                       f"denying to {stored.upstream}")
        self.world.counters["deny"] += 1
        self.cancel_expectations(stored.microbatch)
        self.activations.pop(stored.microbatch, None)
        if stored.upstream is not None:
            self.denied.add(stored.upstream)
            self.send(MessageType.DENY, stored.upstream, mb=stored.microbatch, attempt=stored.attempt)

    def _on_deny(self, msg: Message):
        mb = msg.get("mb")
        stored = self.activations.get(mb)
        entry = self.expecting.get((mb, FORWARD))
        if stored is None or entry is None or entry.peer != msg.src or stored.attempt != msg.get("attempt"):
            return
        del self.expecting[(mb, FORWARD)]
        self.reroute(stored, msg.src, ExclusionReason.DENY)

    def _on_capacity_freed(self, msg: Message):
        if self.exclusion.release(msg.src, ExclusionReason.DENY):
            logger.debug(f"Node {self.node_id} re-admits {msg.src} after capacity freed")

    def _on_complete(self, msg: Message):
        key = (msg.get("mb"), msg.get("phase"))
        entry = self.expecting.get(key)
        if entry is None or entry.peer != msg.src:
            return
        if msg.get("held"):
            self.expect(key[0], key[1], msg.src, extra=2 * self.world.aggregation_timeout)
            return
        del self.expecting[key]
        rtt = self.world.now - entry.sent_at
        if rtt > 0:
            observe_complete(self.stats, msg.src, rtt)

    def _timer_expect(self, payload: dict):
        key = (payload["mb"], payload["phase"])
        entry = self.expecting.get(key)
        if entry is None or entry.token != payload["token"]:
            return
        del self.expecting[key]
        self.world.counters["timeout"] += 1
        logger.debug(f"Node {self.node_id}: {key[1]} COMPLETE for {key[0]} from {entry.peer} overdue")
        if key[1] == FORWARD:
            self.forward_timeout(key[0], entry.peer)
        else:
            self.backward_timeout(key[0], entry.peer)

    def forward_timeout(self, microbatch: int, peer: NodeId):
        stored = self.activations.get(microbatch)
        if stored is not None:
            self.reroute(stored, peer, ExclusionReason.TIMEOUT)

    # ============================================================
    # BACKWARD PASS
    # ============================================================

    def _on_gradient(self, msg: Message):
        mb = msg.get("mb")
        stored = self.activations.get(mb)
        if stored is None:
            logger.error(str(MissingActivation(self.node_id, mb)))
            self.world.counters["missing_activation"] += 1
            return
        if stored.attempt != msg.get("attempt") or stored.backward_started:
            return
        stored.backward_from = msg.src
        self.process_backward(stored)

    def process_backward(self, stored: StoredActivation):
        if not stored.computed:
            raise MissingActivation(self.node_id, stored.microbatch)
        self.phase = Phase.BACKWARD
        stored.backward_started = True
        self.world.compute(self.node_id, self.compute_cost, BACKWARD, mb=stored.microbatch, attempt=stored.attempt)

    def _computed_backward(self, stored: StoredActivation):
        self.params.accumulate(stored.microbatch)
        stored.has_gradient = True
        self.send(MessageType.COMPLETE, stored.backward_from, mb=stored.microbatch, attempt=stored.attempt,
                  phase=BACKWARD)
        self.send_gradient(stored)

    def send_gradient(self, stored: StoredActivation):
        self.send(MessageType.GRADIENT, stored.upstream, size=self.world.activation_size,
                  mb=stored.microbatch, attempt=stored.attempt, origin=stored.origin)
        self.expect(stored.microbatch, BACKWARD, stored.upstream)

    def backward_timeout(self, microbatch: int, peer: NodeId):
        self.exclusion.exclude(peer, ExclusionReason.TIMEOUT)
        if self.agent is not None:
            self.agent.drop_peer(peer)
        stored = self.activations.get(microbatch)
        if stored is not None:
            self.send(MessageType.BACKWARD_STALL, stored.origin, mb=microbatch)

    # ============================================================
    # REPAIR
    # ============================================================

    def _on_repair_probe(self, msg: Message):
        mb = msg.get("mb")
        stored = self.activations.get(mb)
        if msg.get("command") == "resend":
            if stored is None:
                logger.error(str(MissingActivation(self.node_id, mb)))
                return
            self.resend_for_repair(stored, msg.get("new_path"), msg.get("index"))
            return
        self.send(MessageType.REPAIR_ACK, msg.src, mb=mb, token=msg.get("token"),
                  has_gradient=bool(stored is not None and stored.has_gradient))

    def resend_for_repair(self, stored: StoredActivation, new_path: List[NodeId], index: int):
        target = new_path[index + 1]
        stored.downstream = target
        self.send(MessageType.REPAIR_ACTIVATION, target, size=self.world.activation_size,
                  mb=stored.microbatch, origin=stored.origin, iteration=stored.iteration,
                  attempt=stored.attempt, new_path=list(new_path), index=index + 1)

    def _on_repair_activation(self, msg: Message):
        mb, index, new_path = msg.get("mb"), msg.get("index"), msg.get("new_path")
        stored = self.activations.get(mb)
        if stored is not None and stored.attempt == msg.get("attempt") and stored.computed:
            stored.upstream = msg.src
            stored.path = list(new_path[:index + 1])
            if stored.has_gradient:
                self.send_gradient(stored)
            else:
                self.resend_for_repair(stored, new_path, index)
            return
        stored = StoredActivation(mb, msg.get("origin"), msg.get("iteration"), msg.get("attempt"), msg.src,
                                  None, list(new_path[:index + 1]), repair_path=list(new_path), repair_index=index)
        self.activations[mb] = stored
        self.world.counters["recomputed_forward"] += 1
        logger.info(f"Node {self.node_id} recomputes forward for microbatch {mb}")
        self.world.compute(self.node_id, self.compute_cost, "recompute", mb=mb, attempt=stored.attempt)

    def _computed_recompute(self, stored: StoredActivation):
        stored.computed = True
        self.resend_for_repair(stored, stored.repair_path, stored.repair_index)

    # ============================================================
    # LIVENESS
    # ============================================================

    def liveness_sweep(self):
        peers = set(self.agent.record_peers()) if self.agent is not None else set()
        peers |= {p for p in self.world.peers(self.node_id, NEXT) if self.exclusion.reason(p) == ExclusionReason.TIMEOUT}
        for peer in sorted(peers):
            nonce = self.next_token()
            self.pings[nonce] = peer
            self.send(MessageType.PING, peer, nonce=nonce)
            self.world.timer(self.node_id, self.threshold(peer), "ping", nonce=nonce)

    def _on_ping(self, msg: Message):
        self.send(MessageType.PONG, msg.src, nonce=msg.get("nonce"))

    def _on_pong(self, msg: Message):
        if self.pings.pop(msg.get("nonce"), None) == msg.src:
            self.exclusion.release(msg.src, ExclusionReason.TIMEOUT)

    def _timer_ping(self, payload: dict):
        peer = self.pings.pop(payload["nonce"], None)
        if peer is None:
            return
        logger.info(f"Node {self.node_id}: {peer} missed its liveness ping")
        self.exclusion.exclude(peer, ExclusionReason.TIMEOUT)
        if self.agent is not None:
            self.agent.drop_peer(peer)

    # ============================================================
    # AGGREGATION
    # ============================================================

    def _on_begin_aggregation(self, msg: Message):
        self.begin_aggregation(msg.get("iteration"))

    def begin_aggregation(self, iteration: int) -> bool:
        if iteration != self.iteration or self.aggregating:
            return False
        self.aggregating = True
        self.phase = Phase.AGGREGATION
        if not self.is_data and not self.is_last_stage:
            for peer in self.world.stage_members(self.stage + 1, iteration):
                self.send(MessageType.BEGIN_AGGREGATION, peer, iteration=iteration)
        self.aggregation_members = [m for m in self.world.stage_members(self.stage, iteration) if m != self.node_id]
        vector = self.params.accumulator
        self.shares[iteration][self.node_id] = vector
        for peer in self.aggregation_members:
            self.send(MessageType.GRADIENT_SHARE, peer, iteration=iteration, vector=[float(x) for x in vector])
        self.world.timer(self.node_id, self.world.aggregation_timeout, "aggregation", iteration=iteration)
        self.finish_aggregation()
        return True

    def _on_gradient_share(self, msg: Message):
        iteration = msg.get("iteration")
        if iteration < self.iteration:
            return
        self.shares[iteration][msg.src] = np.array(msg.get("vector"), dtype=float)
        self.finish_aggregation()

    def _timer_aggregation(self, payload: dict):
        if self.aggregating and payload["iteration"] == self.iteration:
            missing = [m for m in self.aggregation_members if m not in self.shares[self.iteration]]
            logger.warning(f"Node {self.node_id} aggregates without shares from {missing}")
            self.finish_aggregation(force=True)

    def finish_aggregation(self, force: bool = False) -> bool:
        if not self.aggregating:
            return False
        received = self.shares[self.iteration]
        if not force and any(m not in received for m in self.aggregation_members):
            return False
        included = {n: v for n, v in received.items() if n == self.node_id or n in self.aggregation_members}
        self.params.apply(included, self.config.eta)
        finished = self.iteration
        self.shares.pop(finished, None)
        self.aggregating = False
        self.iteration += 1
        self.phase = Phase.FORMATION
        self.aggregated_at[finished] = self.world.now
        self.activations.clear()
        self.expecting.clear()
        self.parked.clear()
        self.load.clear()
        self.world.on_aggregated(self.node_id, finished, self.params)
        for peer in sorted(self.denied):
            self.send(MessageType.CAPACITY_FREED, peer)
        self.denied.clear()
        if self.agent is not None:
            self.agent.reset_temperature()
        self.liveness_sweep()
        self.world.timer(self.node_id, self.world.aggregation_timeout, "can_take", iteration=finished)
        self.signal_can_take()
        self.replay_buffered()
        return True

    def replay_buffered(self):
        ready = [m for m in self.buffered if m.get("iteration") <= self.iteration]
        self.buffered = [m for m in self.buffered if m.get("iteration") > self.iteration]
        for msg in ready:
            self.on_message(msg)

    def signal_can_take(self) -> bool:
        finished = self.iteration - 1
        if finished < 0 or finished in self.can_take_sent:
            return False
        if not self.is_last_stage and finished not in self.downstream_ready:
            return False
        self.can_take_sent.add(finished)
        for peer in self.world.peers(self.node_id, PREV):
            self.send(MessageType.CAN_TAKE, peer, iteration=finished)
        return True

    def _on_can_take(self, msg: Message):
        self.downstream_ready.add(msg.get("iteration"))
        self.signal_can_take()

    def _timer_can_take(self, payload: dict):
        if payload["iteration"] not in self.can_take_sent:
            self.downstream_ready.add(payload["iteration"])
            self.signal_can_take()

    # ============================================================
    # MEMBERSHIP
    # ============================================================

    def utilization_entry(self) -> UtilizationEntry:
        flows = self.agent.ledger.flows_through() if self.agent is not None else len(self.activations)
        return UtilizationEntry(self.node_id, self.stage, self.capacity, flows)

    def _on_utilization_query(self, msg: Message):
        query_id = msg.get("query_id")
        flood = self.floods.setdefault(query_id, UtilizationFlood(query_id, self.world.num_stages, math.inf))
        if not flood.merge(entries_from_payload(msg.get("entries")) + [self.utilization_entry()]):
            return
        payload = entries_to_payload(flood.entries.values())
        if self.is_last_stage:
            self.send(MessageType.UTILIZATION_REPLY, msg.get("origin"), query_id=query_id, entries=payload)
            return
        for peer in self.world.stage_members(self.stage + 1):
            self.send(MessageType.UTILIZATION_QUERY, peer, query_id=query_id, origin=msg.get("origin"),
                      entries=payload)

    def _on_params_request(self, msg: Message):
        self.send(MessageType.PARAMS_REPLY, msg.src, vector=[float(x) for x in self.params.vector],
                  version=self.params.version, iteration=self.iteration)

    def request_params(self, peer: NodeId):
        self.send(MessageType.PARAMS_REQUEST, peer)

    def _on_params_reply(self, msg: Message):
        if msg.get("iteration") < self.routable_from:
            # the member has not applied the last update yet
            self.world.timer(self.node_id, self.world.round_interval, "params_retry", peer=msg.src)
            return
        self.params.copy_from(msg.get("vector"), msg.get("version"))
        self.iteration = max(self.iteration, msg.get("iteration"))
        logger.info(f"Node {self.node_id} joined stage {self.stage} at params version {self.params.version}")

    def _timer_params_retry(self, payload: dict):
        self.request_params(payload["peer"])
