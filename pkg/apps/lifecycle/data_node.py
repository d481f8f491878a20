# ===== apps/lifecycle/data_node.py =====
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional

from apps.domain.types import NodeId
from apps.membership.admission import Candidate, UtilizationFlood, assign_candidates, entries_from_payload, rank_stages
from apps.oracle.addition import capacity_first_assignment, random_assignment
from apps.recovery.detection import ExclusionReason
from apps.recovery.exceptions import IrreparablePath
from apps.recovery.repair import PIPELINE_RESTART, RepairChase, plan_backward_repair
from apps.simnet.messages import Message, MessageType

from .params import Phase
from .peer import BACKWARD, FORWARD, PeerNode, StoredActivation

logger = logging.getLogger(__name__)

MICROBATCH_SPAN = 1_000


def microbatch_id(iteration: int, origin: NodeId, index: int) -> int:
    return (iteration * MICROBATCH_SPAN + origin) * MICROBATCH_SPAN + index


def microbatch_iteration(microbatch: int) -> int:
    return microbatch // (MICROBATCH_SPAN * MICROBATCH_SPAN)


class Outcome(str, Enum):
    PENDING = "pending"
    FORWARD = "forward"
    BACKWARD = "backward"
    COMPLETED = "completed"
    DEFERRED = "deferred"
    ABANDONED = "abandoned"


TERMINAL = (Outcome.COMPLETED, Outcome.DEFERRED, Outcome.ABANDONED)


@dataclass
class MicrobatchState:
    microbatch: int
    index: int
    attempt: int = 0
    status: Outcome = Outcome.PENDING
    path: List[NodeId] = field(default_factory=list)
    source_flow: Optional[int] = None
    sink_upstream: Optional[NodeId] = None


class DataPeer(PeerNode):
    """Data node: emits microbatches, closes their loop, and leads when it has the lowest id"""

    def __init__(self, spec, world, config, rng=None, incarnation: int = 0, iteration: int = 0):
        super().__init__(spec, world, config, rng, incarnation, iteration)
        self.microbatches: Dict[int, MicrobatchState] = {}
        self.emitted = False
        self.done_sent = False
        self.finished = False
        self.formation_started = 0
        self.last_change = 0
        self._source_view: tuple = ()
        self.repairs: Dict[int, RepairChase] = {}
        self.repair_probes: Dict[int, int] = {}
        self.stage_zero_ready: Dict[int, set] = {}
        self.stage_zero_expected: Dict[int, List[NodeId]] = {}
        self.iteration_started_at = 0.0

        # leader state
        self.done_reports: Dict[int, set] = {}
        self.begun: set = set()
        self.candidates: Dict[NodeId, Candidate] = {}
        self.flood: Optional[UtilizationFlood] = None
        self._query_counter = 0

    # ============================================================
    # ITERATION START
    # ============================================================

    def on_tick(self, round_index: int):
        super().on_tick(round_index)
        if self.finished or self.emitted or self.phase != Phase.FORMATION:
            return
        if self.ready_to_emit():
            self.emit()

    def ready_to_emit(self) -> bool:
        if self.agent is None:
            return True
        sources = self.agent.ledger.sources
        view = tuple((r.flow_id, r.downstream, round(r.cost_to_sink, 9)) for r in sources)
        if view != self._source_view:
            self._source_view = view
            self.last_change = self.round
        if len(sources) >= self.config.microbatches:
            return True
        if sources and self.round - self.last_change >= self.config.window:
            return True
        return self.round - self.formation_started >= self.config.max_formation_rounds

    def emit(self):
        self.emitted = True
        self.done_sent = False
        self.phase = Phase.FORWARD
        self.iteration_started_at = self.world.now
        sources = self.agent.ledger.sources if self.agent is not None else []
        flows = len(sources) if self.agent is not None else "greedy"
        logger.info(f"Data node {self.node_id} starts iteration {self.iteration} with {flows} flows")
        for index in range(self.config.microbatches):
            state = MicrobatchState(microbatch_id(self.iteration, self.node_id, index), index)
            self.microbatches[state.microbatch] = state
            if self.agent is not None:
                if index >= len(sources):
                    self.resolve(state, Outcome.DEFERRED)
                    continue
                state.source_flow = sources[index].flow_id
            self.launch(state, attempt=0)
        self.world.timer(self.node_id, self.world.iteration_deadline, "deadline", iteration=self.iteration)
        if self.is_leader:
            self.world.timer(self.node_id, self.world.iteration_deadline + self.world.aggregation_timeout,
                             "leader_deadline", iteration=self.iteration)
        self.check_iteration_done()

    def launch(self, state: MicrobatchState, attempt: int):
        state.attempt = attempt
        state.status = Outcome.FORWARD
        state.path = [self.node_id]
        stored = StoredActivation(state.microbatch, self.node_id, self.iteration, attempt, None,
                                  state.source_flow, [self.node_id])
        self.activations[state.microbatch] = stored
        self.world.compute(self.node_id, self.compute_cost, FORWARD, mb=state.microbatch, attempt=attempt)

    # ============================================================
    # FORWARD FAILURES
    # ============================================================

    def reroute_flow(self, stored: StoredActivation, stale: Optional[NodeId], reason: ExclusionReason):
        if stale is not None:
            self.exclusion.exclude(stale, reason)
        self._detach(stored, stale, reason)
        self.deny_upstream(stored)

    def deny_upstream(self, stored: StoredActivation):
        state = self.microbatches.get(stored.microbatch)
        if state is not None and state.attempt == stored.attempt:
            logger.warning(f"Data node {self.node_id} defers microbatch {stored.microbatch}")
            self.resolve(state, Outcome.DEFERRED)

    # ============================================================
    # SINK SIDE
    # ============================================================

    def _on_activation(self, msg: Message):
        state = self.microbatches.get(msg.get("mb"))
        if msg.get("origin") != self.node_id or state is None:
            logger.debug(f"Data node {self.node_id} drops foreign activation {msg.get('mb')}")
            return
        if state.attempt != msg.get("attempt") or state.status != Outcome.FORWARD:
            return
        state.path = list(msg.get("path")) + [self.node_id]
        state.status = Outcome.BACKWARD
        state.sink_upstream = msg.src
        self.world.compute(self.node_id, self.compute_cost, "loss", mb=state.microbatch, attempt=state.attempt)

    def _computed_loss(self, stored: StoredActivation):
        state = self.microbatches[stored.microbatch]
        self.send(MessageType.COMPLETE, state.sink_upstream, mb=state.microbatch, attempt=state.attempt,
                  phase=FORWARD)
        self.send_loss_gradient(state)

    def send_loss_gradient(self, state: MicrobatchState):
        self.send(MessageType.GRADIENT, state.sink_upstream, size=self.world.activation_size,
                  mb=state.microbatch, attempt=state.attempt, origin=self.node_id)
        self.expect(state.microbatch, BACKWARD, state.sink_upstream)

    # ============================================================
    # SOURCE SIDE
    # ============================================================

    def _on_gradient(self, msg: Message):
        state = self.microbatches.get(msg.get("mb"))
        if state is None or state.attempt != msg.get("attempt") or state.status != Outcome.BACKWARD:
            return
        super()._on_gradient(msg)

    def _computed_backward(self, stored: StoredActivation):
        state = self.microbatches[stored.microbatch]
        self.params.accumulate(stored.microbatch)
        stored.has_gradient = True
        self.send(MessageType.COMPLETE, stored.backward_from, mb=stored.microbatch, attempt=stored.attempt,
                  phase=BACKWARD)
        self.resolve(state, Outcome.COMPLETED)

    def resolve(self, state: MicrobatchState, outcome: Outcome):
        if state.status in TERMINAL:
            return
        state.status = outcome
        self.cancel_expectations(state.microbatch)
        self.repair_probes = {t: mb for t, mb in self.repair_probes.items() if mb != state.microbatch}
        self.world.resolve(self.node_id, state.microbatch, outcome.value, list(state.path), state.attempt,
                           self.iteration)
        self.check_iteration_done()

    def check_iteration_done(self):
        if not self.emitted or self.done_sent:
            return
        if any(s.status not in TERMINAL for s in self.microbatches.values()):
            return
        self.done_sent = True
        leader = self.world.leader()
        if leader == self.node_id:
            self.report_done(self.node_id, self.iteration)
        else:
            self.send(MessageType.DATA_DONE, leader, iteration=self.iteration)

    def _timer_deadline(self, payload: dict):
        if payload["iteration"] != self.iteration:
            return
        for mb in sorted(self.microbatches):
            state = self.microbatches[mb]
            if state.status not in TERMINAL:
                logger.warning(f"Data node {self.node_id} abandons microbatch {mb} at the iteration deadline")
                self.world.counters["abandoned"] += 1
                self.resolve(state, Outcome.ABANDONED)

    # ============================================================
    # BACKWARD REPAIR
    # ============================================================

    def backward_timeout(self, microbatch: int, peer: NodeId):
        self.exclusion.exclude(peer, ExclusionReason.TIMEOUT)
        if self.agent is not None:
            self.agent.drop_peer(peer)
        self.start_repair(microbatch)

    def _on_backward_stall(self, msg: Message):
        self.start_repair(msg.get("mb"))

    def start_repair(self, microbatch: int):
        state = self.microbatches.get(microbatch)
        if state is None or state.status != Outcome.BACKWARD or microbatch in self.repairs:
            return
        self.world.counters["repairs"] += 1
        if self.config.recovery == PIPELINE_RESTART:
            self.world.counters["recomputed_forward"] += len(state.path) - 2
            logger.warning(f"Data node {self.node_id} restarts microbatch {microbatch} from the first stage")
            self.cancel_expectations(microbatch)
            self.launch(state, state.attempt + 1)
            return
        chase = RepairChase(microbatch, list(state.path))
        self.repairs[microbatch] = chase
        self.probe_next(chase)

    def probe_next(self, chase: RepairChase):
        node = chase.current
        if node is None:
            self.finish_chase(chase)
            return
        token = self.next_token()
        self.repair_probes[token] = chase.microbatch
        self.send(MessageType.REPAIR_PROBE, node, mb=chase.microbatch, command="ping", token=token)
        self.world.timer(self.node_id, self.threshold(node), "repair_probe", token=token, node=node)

    def _on_repair_ack(self, msg: Message):
        mb = self.repair_probes.pop(msg.get("token"), None)
        chase = self.repairs.get(mb)
        if chase is None or chase.current != msg.src:
            return
        chase.on_ack(msg.src, bool(msg.get("has_gradient")))
        self.probe_next(chase)

    def _timer_repair_probe(self, payload: dict):
        mb = self.repair_probes.pop(payload["token"], None)
        chase = self.repairs.get(mb)
        if chase is None:
            return
        chase.on_timeout(payload["node"])
        self.probe_next(chase)

    def choose_replacement(self, stage_index: int, previous: NodeId, dead) -> Optional[NodeId]:
        candidates = [
            m for m in self.world.stage_members(stage_index)
            if m not in dead and self.exclusion.reason(m) != ExclusionReason.TIMEOUT
        ]
        ranked = sorted((self.world.edge_cost(previous, m), m) for m in candidates)
        ranked = [(cost, m) for cost, m in ranked if not math.isinf(cost)]
        return ranked[0][1] if ranked else None

    def finish_chase(self, chase: RepairChase):
        state = self.microbatches.get(chase.microbatch)
        if state is None or state.status != Outcome.BACKWARD:
            return
        try:
            plan = plan_backward_repair(chase.microbatch, chase.path, lambda n: n not in chase.dead,
                                        self.choose_replacement)
        except IrreparablePath as exc:
            logger.error(str(exc))
            self.world.counters["abandoned"] += 1
            self.resolve(state, Outcome.ABANDONED)
            self.world.fail(exc)
            return
        if not plan.needed:
            logger.info(f"Repair chase for microbatch {chase.microbatch} found every node alive")
            return
        state.path = list(plan.new_path)
        if plan.resume_from == 0:
            self.resend_for_repair(self.activations[chase.microbatch], plan.new_path, 0)
        else:
            self.send(MessageType.REPAIR_PROBE, plan.new_path[plan.resume_from], mb=chase.microbatch,
                      command="resend", new_path=list(plan.new_path), index=plan.resume_from)

    def _on_repair_activation(self, msg: Message):
        state = self.microbatches.get(msg.get("mb"))
        if state is None or state.status != Outcome.BACKWARD or state.attempt != msg.get("attempt"):
            return
        state.sink_upstream = msg.src
        self.send_loss_gradient(state)

    # ============================================================
    # AGGREGATION AND NEXT ITERATION
    # ============================================================

    @property
    def is_leader(self) -> bool:
        return self.world.leader() == self.node_id

    def _on_data_done(self, msg: Message):
        self.report_done(msg.src, msg.get("iteration"))

    def report_done(self, node: NodeId, iteration: int):
        self.done_reports.setdefault(iteration, set()).add(node)
        if set(self.world.stage_members(None)) <= self.done_reports[iteration]:
            self.start_aggregation_round(iteration)

    def _timer_leader_deadline(self, payload: dict):
        if payload["iteration"] not in self.begun:
            logger.warning(f"Leader {self.node_id} starts aggregation of iteration {payload['iteration']} "
                           f"at the deadline")
            self.start_aggregation_round(payload["iteration"])

    def start_aggregation_round(self, iteration: int):
        if iteration in self.begun:
            return
        self.begun.add(iteration)
        logger.info(f"Leader {self.node_id} begins aggregation of iteration {iteration}")
        for node in self.world.stage_members(0, iteration):
            self.send(MessageType.BEGIN_AGGREGATION, node, iteration=iteration)
        for node in self.world.stage_members(None):
            if node != self.node_id:
                self.send(MessageType.BEGIN_AGGREGATION, node, iteration=iteration)
        self.begin_aggregation(iteration)

    def begin_aggregation(self, iteration: int) -> bool:
        if iteration != self.iteration or self.aggregating:
            return False
        self.stage_zero_expected[iteration] = self.world.stage_members(0, iteration)
        return super().begin_aggregation(iteration)

    def finish_aggregation(self, force: bool = False) -> bool:
        if not super().finish_aggregation(force):
            return False
        if self.is_leader:
            self.run_admission()
        return True

    def signal_can_take(self) -> bool:
        finished = self.iteration - 1
        if finished < 0 or finished in self.can_take_sent or finished not in self.aggregated_at:
            return False
        expected = set(self.stage_zero_expected.get(finished, []))
        if finished not in self.downstream_ready and not expected <= self.stage_zero_ready.get(finished, set()):
            return False
        self.can_take_sent.add(finished)
        self.next_iteration(finished)
        return True

    def _on_can_take(self, msg: Message):
        self.stage_zero_ready.setdefault(msg.get("iteration"), set()).add(msg.src)
        self.signal_can_take()

    def next_iteration(self, finished: int):
        self.world.iteration_finished(self.node_id, finished, self.aggregated_at[finished])
        self.microbatches.clear()
        self.repairs.clear()
        self.repair_probes.clear()
        self.emitted = False
        self.formation_started = self.round
        self.last_change = self.round
        if self.iteration >= self.config.iterations:
            self.finished = True
            logger.info(f"Data node {self.node_id} finished {self.iteration} iteration(s)")
            return
        if self.agent is None:
            self.emit()

    # ============================================================
    # ADMISSION (LEADER)
    # ============================================================

    def _on_join(self, msg: Message):
        self.candidates[msg.src] = Candidate(msg.src, msg.get("capacity"), self.world.now,
                                             msg.get("compute_cost", 0.0))
        logger.info(f"Leader {self.node_id} queued candidate {msg.src} (capacity {msg.get('capacity')})")

    def run_admission(self):
        if not self.candidates:
            return
        mode = self.world.addition_mode
        if mode in ("capacity-first", "random"):
            specs = [self.world.candidate_spec(c) for c in sorted(self.candidates)]
            if mode == "capacity-first":
                assignment = capacity_first_assignment(specs, self.world.num_stages)
            else:
                assignment = random_assignment(specs, self.world.num_stages, self.world.addition_rng)
            self.admit(assignment)
            return
        self._query_counter += 1
        query_id = self.node_id * 1_000_000 + self._query_counter
        self.flood = UtilizationFlood(query_id, self.world.num_stages, self.world.now + self.world.flood_timeout)
        for node in self.world.stage_members(0):
            self.send(MessageType.UTILIZATION_QUERY, node, query_id=query_id, origin=self.node_id, entries=[])
        self.world.timer(self.node_id, self.world.flood_timeout, "flood", query_id=query_id)

    def _on_utilization_reply(self, msg: Message):
        if self.flood is None or self.flood.query_id != msg.get("query_id"):
            return
        self.flood.merge(entries_from_payload(msg.get("entries")))
        expected = [n for stage in range(self.world.num_stages) for n in self.world.stage_members(stage)]
        if self.flood.covers(expected):
            logger.info(f"Leader {self.node_id} has every stage's utilization for query {self.flood.query_id}")
            self.finish_flood()

    def _timer_flood(self, payload: dict):
        if self.flood is None or self.flood.query_id != payload["query_id"]:
            return
        self.finish_flood()

    def finish_flood(self):
        report = self.flood.report()
        self.flood = None
        self.world.record_utilization(report)
        if not report.stages:
            return
        self.admit(assign_candidates(self.candidates.values(), rank_stages(report)))

    def admit(self, assignment: Dict[NodeId, int]):
        for node in sorted(assignment):
            self.candidates.pop(node, None)
            self.send(MessageType.ADMIT, node, stage=assignment[node], routable_from=self.iteration)
        if self.candidates:
            logger.info(f"Leader {self.node_id} defers {len(self.candidates)} candidate(s)")
