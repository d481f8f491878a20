# ===== apps/harness/simulation.py =====
import logging
import math
import statistics
from collections import Counter, defaultdict
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from apps.cost.cost_model import CostMatrix, assignment_from_paths, pair_cost, sum_cost
from apps.domain.exceptions import UnknownNode
from apps.domain.types import LinkSpec, NodeId, NodeSpec, StageId, Topology
from apps.domain.validation import NEXT, PREV, SAME, validate_topology
from apps.lifecycle.data_node import DataPeer, microbatch_iteration
from apps.lifecycle.exceptions import LifecycleError
from apps.lifecycle.peer import PeerNode
from apps.membership.admission import Candidate, elect_leader, join_node
from apps.membership.exceptions import NoDataNodeAlive
from apps.membership.registry import Registry
from apps.protocol.agent import FlowAgent, ProtocolConfig
from apps.protocol.operations import steady_state
from apps.recovery.exceptions import IrreparablePath
from apps.simnet.churn import CRASH, inject_churn
from apps.simnet.engine import Event, EventKind, SimulationEngine
from apps.simnet.exceptions import EventStorm
from apps.simnet.messages import DATA_MESSAGES, Message, MessageType
from apps.simnet.rng import RngStreams

from .exceptions import RunStalled
from .metrics import DataTransit, MetricsReport, ResolvedMicrobatch, WorkItem, build_iteration_metrics
from .scenarios import ScenarioConfig, build_candidates, build_topology

logger = logging.getLogger(__name__)


class FormationPeer:
    """Flow construction only, for formation runs"""

    def __init__(self, spec: NodeSpec, world, config: ProtocolConfig, rng=None, incarnation: int = 0):
        self.node_id = spec.id
        self.iteration = 0
        self.agent = FlowAgent(spec.id, spec.stage, spec.capacity, spec.is_data, world, config, rng, incarnation)

    def on_tick(self, round_index: int):
        self.agent.on_round(round_index)

    def on_message(self, msg: Message):
        self.agent.handle(msg)

    def on_timer(self, payload: dict):
        pass

    def on_compute_done(self, payload: dict):
        pass


class Simulation:
    """Clock, network, directory and bookkeeping for one run.

    Nodes only see the world through `send`, `timer`, `compute`, `peers` and
    `stage_members`. Liveness, churn and metrics stay global.
    """

    def __init__(
        self,
        config: ScenarioConfig,
        topology: Optional[Topology] = None,
        candidates: Iterable[NodeSpec] = (),
        candidate_links: Iterable[LinkSpec] = (),
        formation_only: bool = False,
        record_trace: bool = True,
    ):
        self.config = config
        self.streams = RngStreams(config.seed)
        if topology is None:
            topology = build_topology(config, self.streams.stream("scenario"))
            if not candidates:
                candidates, candidate_links = build_candidates(config, topology, self.streams.stream("candidates"))
        self.topology = validate_topology(topology)
        self.formation_only = formation_only
        self.runtime = config.runtime_config()

        self.pending: Dict[NodeId, NodeSpec] = {c.id: c for c in candidates}
        self.candidate_links: Dict[Tuple[NodeId, NodeId], LinkSpec] = {(l.src, l.dst): l for l in candidate_links}

        latencies = [link.latency for link in self.topology.links.values()] or [1.0]
        max_latency = max(latencies)
        self.jitter = config.jitter
        self.round_interval = config.round_interval or 4 * (max_latency + self.jitter) or 1.0
        self.activation_size = self.topology.activation_size
        self.aggregation_timeout = 2 * self.round_interval
        self.flood_timeout = 2 * (self.num_stages + 2) * (max_latency + self.jitter) + self.round_interval

        bandwidths = [link.bandwidth for link in self.topology.links.values()] or [1.0]
        max_transfer = self.activation_size / min(bandwidths)
        max_compute = max(n.compute_cost for n in self.topology.nodes)
        total_microbatches = config.microbatches * len(self.topology.data_nodes())
        self.iteration_deadline = (config.deadline_rounds * self.round_interval
                                   + 2 * (self.num_stages + 2) * total_microbatches * (max_compute + max_transfer))

        self.registry_ttl = config.registry_ttl_rounds * self.round_interval
        self.registry = Registry(self.registry_ttl, statistics.median(latencies))

        self.engine = SimulationEngine(self.link, self.streams, self.is_alive, config.max_queue, config.jitter,
                                       config.latency_bound, config.congestion, record_trace)
        self.engine.bind(self.dispatch)

        self.addition_mode = config.addition
        self.addition_rng = self.streams.stream("addition")
        self.churn_rng = self.streams.stream("churn")

        self.counters: Counter = Counter()
        self.nodes: Dict[NodeId, object] = {}
        self.incarnations: Counter = Counter()
        self.busy_until: Dict[NodeId, float] = {}
        self.faults: Dict[NodeId, MessageType] = {}
        self.round = 0
        self._started = False
        self.failure: Optional[Exception] = None
        self._costs: Dict[Tuple[NodeId, NodeId], float] = {}

        self.work: List[WorkItem] = []
        self.resolved: List[ResolvedMicrobatch] = []
        self.transits: List[DataTransit] = []
        self.iteration_ends: Dict[int, Dict[NodeId, float]] = defaultdict(dict)
        self.closed: List[int] = []
        self.marks: Dict[int, Tuple[int, Counter]] = {}
        self.params_log: Dict[tuple, Dict[NodeId, np.ndarray]] = defaultdict(dict)
        self.utilization_reports: list = []

        self.cost_curve: List[Tuple[int, int, float]] = []
        self.formation_done = False
        self.steady_round: Optional[int] = None

        for spec in self.topology.nodes:
            self._start_peer(spec, iteration=0, routable_from=0)

    # ============================================================
    # WORLD VIEW FOR NODES
    # ============================================================

    @property
    def now(self) -> float:
        return self.engine.now

    @property
    def num_stages(self) -> int:
        return self.topology.num_stages

    def link(self, src: NodeId, dst: NodeId) -> Optional[LinkSpec]:
        return self.topology.link(src, dst) or self.candidate_links.get((src, dst))

    def is_alive(self, node: NodeId) -> bool:
        if node in self.pending and node not in self.nodes:
            return True
        return self.topology.has_node(node) and self.topology.node(node).alive

    def edge_cost(self, a: NodeId, b: NodeId) -> float:
        key = (a, b)
        if key not in self._costs:
            try:
                self._costs[key] = pair_cost(self.topology, a, b)
            except UnknownNode:
                return math.inf
        return self._costs[key]

    def leader(self) -> NodeId:
        return elect_leader(d.id for d in self.topology.data_nodes(alive_only=True))

    def stage_members(self, stage: Optional[StageId], iteration: Optional[int] = None) -> List[NodeId]:
        if stage is None:
            return self.registry.data_members(self.now)
        return self.registry.stage_members(stage, self.now, iteration)

    def peers(self, node: NodeId, direction: str) -> List[NodeId]:
        """Directory view of a node's previous, next or own stage; data nodes bracket the pipeline"""
        peer = self.peers_by_id(node)
        iteration = peer.iteration if peer is not None else None
        spec = self.topology.node(node)
        last = self.num_stages - 1
        if direction == SAME:
            members = self.stage_members(None if spec.is_data else spec.stage, iteration)
            return [m for m in members if m != node]
        if direction == NEXT:
            if spec.is_data:
                target = 0
            else:
                target = None if spec.stage == last else spec.stage + 1
        elif direction == PREV:
            if spec.is_data:
                target = last
            else:
                target = None if spec.stage == 0 else spec.stage - 1
        else:
            raise ValueError(f"Unsupported direction: {direction}")
        return self.stage_members(target, iteration)

    def peers_by_id(self, node: NodeId):
        return self.nodes.get(node)

    def send(self, src: NodeId, mtype: MessageType, dst: NodeId, payload: dict, size: float = 0.0):
        message = Message(mtype, src, dst, dict(payload), size)
        event = self.engine.send(message)
        if mtype in DATA_MESSAGES:
            mb = message.get("mb")
            self.transits.append(DataTransit(mb, message.get("attempt", 0), src, dst, event.payload.delay,
                                             microbatch_iteration(mb)))

    def timer(self, node: NodeId, delay: float, name: str, /, **data):
        payload = {"name": name, "incarnation": self.incarnations[node], **data}
        self.engine.schedule(delay, EventKind.TIMER, node, payload)

    def compute(self, node: NodeId, duration: float, name: str, mb: int, attempt: int):
        """Nodes compute one microbatch at a time, in arrival order"""
        start = max(self.now, self.busy_until.get(node, 0.0))
        end = start + duration
        self.busy_until[node] = end
        payload = {"name": name, "mb": mb, "attempt": attempt, "duration": duration,
                   "incarnation": self.incarnations[node]}
        self.engine.schedule_at(end, EventKind.COMPUTE_DONE, node, payload)

    # ============================================================
    # REPORTS FROM NODES
    # ============================================================

    def record_work(self, node: NodeId, microbatch: int, kind: str, duration: float, attempt: int, iteration: int):
        self.work.append(WorkItem(node, microbatch, kind, duration, attempt, iteration))

    def resolve(self, origin: NodeId, microbatch: int, outcome: str, path, attempt: int, iteration: int):
        self.resolved.append(ResolvedMicrobatch(origin, microbatch, outcome, tuple(path), attempt, iteration))
        logger.debug(f"Microbatch {microbatch} of {origin} resolved {outcome} via {list(path)}")

    def on_aggregated(self, node: NodeId, iteration: int, params):
        stage = self.topology.node(node).stage
        self.params_log[(iteration, stage)][node] = params.vector.copy()

    def iteration_finished(self, node: NodeId, iteration: int, time: float):
        self.iteration_ends[iteration][node] = time
        data_nodes = {d.id for d in self.topology.data_nodes(alive_only=True)}
        if data_nodes <= set(self.iteration_ends[iteration]) and iteration not in self.closed:
            self._close_iteration(iteration)

    def record_utilization(self, report):
        self.utilization_reports.append(report)
        logger.info(f"Utilization report: { {s: round(u, 3) for s, u in report.utilizations().items()} }")

    def candidate_spec(self, node: NodeId) -> NodeSpec:
        return self.pending[node]

    def fail(self, exc: Exception):
        if self.failure is None:
            logger.error(f"Run failed at t={self.now:.3f}: {exc}")
            self.failure = exc

    # ============================================================
    # NODE LIFECYCLE
    # ============================================================

    def _start_peer(self, spec: NodeSpec, iteration: int, routable_from: int):
        incarnation = self.incarnations[spec.id]
        rng = self.streams.node_stream("annealing", spec.id)
        if self.formation_only:
            peer = FormationPeer(spec, self, self.runtime.protocol, rng, incarnation)
        elif spec.is_data:
            peer = DataPeer(spec, self, self.runtime, rng, incarnation)
        else:
            peer = PeerNode(spec, self, self.runtime, rng, incarnation, iteration, routable_from)
        self.nodes[spec.id] = peer
        self.registry.register(spec.id, spec.stage, spec.is_data, self.now, routable_from)
        return peer

    def crash(self, node: NodeId):
        spec = self.topology.node(node)
        if not spec.alive:
            return
        if spec.is_data:
            logger.warning(f"Ignoring crash of persistent data node {node}")
            return
        self.topology = self.topology.with_alive(node, False)
        self.nodes.pop(node, None)
        self.busy_until.pop(node, None)
        self.incarnations[node] += 1
        self.counters["crash"] += 1
        logger.warning(f"Node {node} (stage {spec.stage}) crashed at t={self.now:.3f}")

    def crash_at(self, node: NodeId, time: float):
        self.engine.schedule_at(time, EventKind.CRASH, node)

    def inject_fault(self, node: NodeId, on: MessageType):
        """Crash `node` when the first message of type `on` reaches it"""
        self.faults[node] = on

    def announce(self, node: NodeId):
        """A candidate (new node or a crashed relay coming back) sends JOIN to the leader"""
        if node in self.nodes:
            return
        spec = self.pending.get(node)
        if spec is None:
            spec = self.topology.node(node)
            self.pending[node] = spec
        try:
            leader = self.leader()
        except NoDataNodeAlive as exc:
            self.fail(exc)
            return
        self.counters["join"] += 1
        self.send(node, MessageType.JOIN, leader, {"capacity": spec.capacity, "compute_cost": spec.compute_cost})

    def admit(self, node: NodeId, stage: StageId, routable_from: int) -> PeerNode:
        spec = self.pending.pop(node)
        candidate = Candidate(node, spec.capacity, self.now, spec.compute_cost)
        links = [
            link for key, link in sorted(self.candidate_links.items())
            if node in key and all(n == node or self.topology.has_node(n) for n in key)
        ]
        for link in links:
            del self.candidate_links[(link.src, link.dst)]
        self.topology = join_node(self.topology, candidate, stage, links)
        self._costs.clear()

        members = [m for m in self.registry.stage_members(stage, self.now, routable_from - 1) if m != node]
        peer = self._start_peer(self.topology.node(node), routable_from, routable_from)
        self.counters["admitted"] += 1
        logger.info(f"Node {node} admitted to stage {stage}, routable from iteration {routable_from}")
        if members:
            peer.request_params(members[0])
        return peer

    def _candidate_receive(self, msg: Message):
        if msg.type == MessageType.ADMIT:
            self.admit(msg.dst, msg.get("stage"), msg.get("routable_from"))

    # ============================================================
    # EVENT DISPATCH
    # ============================================================

    def dispatch(self, event: Event):
        if event.kind == EventKind.TIMER and event.node is None:
            self._on_round(event.payload["round"])
            return
        if event.kind == EventKind.CRASH:
            self.crash(event.node)
            return
        if event.kind == EventKind.JOIN:
            self.announce(event.node)
            return
        if event.kind == EventKind.DELIVER:
            self._deliver(event.payload.message)
            return

        peer = self.nodes.get(event.node)
        if peer is None or event.payload.get("incarnation") != self.incarnations[event.node]:
            return
        try:
            if event.kind == EventKind.TIMER:
                peer.on_timer(event.payload)
            else:
                peer.on_compute_done(event.payload)
        except LifecycleError as exc:
            self._lifecycle_error(exc)

    def _deliver(self, msg: Message):
        if msg.dst in self.pending and msg.dst not in self.nodes:
            self._candidate_receive(msg)
            return
        peer = self.nodes.get(msg.dst)
        if peer is None:
            return
        if self.faults.get(msg.dst) == msg.type:
            del self.faults[msg.dst]
            logger.warning(f"Injected fault: node {msg.dst} crashes on {msg.type.value}")
            self.crash(msg.dst)
            return
        try:
            peer.on_message(msg)
        except LifecycleError as exc:
            self._lifecycle_error(exc)

    def _lifecycle_error(self, exc: LifecycleError):
        self.counters["phase_violation"] += 1
        logger.warning(f"Dropped out-of-phase work: {exc}")

    def _on_round(self, round_index: int):
        self.round = round_index
        for node in sorted(self.nodes):
            self.registry.refresh(node, self.now)
        for node in sorted(self.nodes):
            peer = self.nodes.get(node)
            if peer is not None:
                peer.on_tick(round_index)
        if self.formation_only:
            self._observe_formation(round_index)
        if not self.done():
            self.engine.schedule(self.round_interval, EventKind.TIMER, None, {"round": round_index + 1})

    # ============================================================
    # ITERATIONS AND CHURN
    # ============================================================

    def _close_iteration(self, iteration: int):
        self.closed.append(iteration)
        control = sum(n for t, n in self.engine.message_counts.items() if t not in DATA_MESSAGES)
        self.marks[iteration] = (control, Counter(self.counters))
        end = max(self.iteration_ends[iteration].values())
        logger.info(f"Iteration {iteration} closed at t={end:.3f}")

        if self.config.churn > 0 and iteration + 1 < self.config.iterations:
            previous = self.iteration_ends.get(iteration - 1)
            start = max(previous.values()) if previous else 0.0
            length = max(end - start, self.round_interval)
            alive = [r.id for r in self.topology.relays(alive_only=True)]
            crashed = [r.id for r in self.topology.relays() if not r.alive and r.id not in self.pending]
            for event in inject_churn(self.config.churn, alive, crashed, self.churn_rng, self.now, length):
                kind = EventKind.CRASH if event.action == CRASH else EventKind.JOIN
                self.engine.schedule_at(event.time, kind, event.node)

    def finished_iterations(self) -> int:
        return len(self.closed)

    def done(self) -> bool:
        if self.failure is not None:
            return True
        if self.formation_only:
            return self.formation_done
        return all(p.finished for p in self.nodes.values() if isinstance(p, DataPeer))

    def time_limit(self) -> float:
        if self.formation_only:
            return (self.config.max_rounds + 1) * self.round_interval
        per_iteration = self.iteration_deadline + 4 * self.aggregation_timeout + self.config.max_rounds * self.round_interval
        return self.config.iterations * per_iteration

    def start(self) -> "Simulation":
        """Schedule round 0 and the initial JOINs; later calls do nothing"""
        if self._started:
            return self
        self._started = True
        self.engine.schedule_at(0.0, EventKind.TIMER, None, {"round": 0})
        if not self.formation_only:
            for node in sorted(self.pending):
                self.engine.schedule_at(0.0, EventKind.JOIN, node)
        return self

    def run(self, until: Optional[float] = None) -> "Simulation":
        self.start()
        try:
            self.engine.run_until(self.done, until or self.time_limit())
        except (IrreparablePath, NoDataNodeAlive, EventStorm) as exc:
            self.fail(exc)
        if not self.done():
            self.fail(RunStalled(self.now, self.finished_iterations(), self.config.iterations))
        return self

    # ============================================================
    # FORMATION
    # ============================================================

    def formed_paths(self) -> List[List[NodeId]]:
        """Complete flows read off the ledgers, following downstream pointers"""
        paths = []
        for data in self.topology.data_nodes(alive_only=True):
            agent = self.nodes[data.id].agent
            for source in agent.ledger.sources:
                path, record = [data.id], source
                for _ in range(self.num_stages + 1):
                    nxt = record.downstream
                    holder = self.nodes.get(nxt)
                    if holder is None or holder.agent is None:
                        break
                    record = holder.agent.ledger.get(record.downstream_flow)
                    if record is None:
                        break
                    path.append(nxt)
                    if nxt == data.id:
                        paths.append(path)
                        break
        return paths

    def formed_cost(self) -> Tuple[int, float]:
        paths = self.formed_paths()
        return len(paths), sum_cost(assignment_from_paths(paths), CostMatrix(self.topology))

    def _observe_formation(self, round_index: int):
        flows, cost = self.formed_cost()
        self.cost_curve.append((round_index, flows, cost))
        histories = [p.agent.change_rounds for p in self.nodes.values() if p.agent is not None]
        if flows and steady_state(histories, round_index, self.config.window):
            self.steady_round = round_index
            self.formation_done = True
        elif round_index >= self.config.max_rounds:
            logger.warning(f"No steady state after {round_index} rounds ({flows} flows, cost {cost:.3f})")
            self.formation_done = True

    # ============================================================
    # RESULTS
    # ============================================================

    def stage_consistency_violations(self) -> List[str]:
        """Same-stage replicas whose vectors differ after an aggregation"""
        violations = []
        for (iteration, stage), vectors in sorted(self.params_log.items(),
                                                  key=lambda kv: (kv[0][0], -1 if kv[0][1] is None else kv[0][1])):
            nodes = sorted(vectors)
            reference = vectors[nodes[0]]
            for node in nodes[1:]:
                if not np.array_equal(reference, vectors[node]):
                    violations.append(f"iteration {iteration} stage {stage}: {nodes[0]} != {node}")
        return violations

    def report(self) -> MetricsReport:
        report = MetricsReport(self.config.name, self.config.seed, self.config.routing, self.config.recovery)
        previous_end = 0.0
        previous_control, previous_counters = 0, Counter()
        for iteration in sorted(self.closed):
            control, counters = self.marks[iteration]
            recovery = {k: v for k, v in (counters - previous_counters).items() if v}
            report.iterations.append(build_iteration_metrics(
                iteration,
                self.iteration_ends[iteration],
                previous_end,
                self.work,
                self.resolved,
                self.transits,
                control - previous_control,
                recovery,
            ))
            previous_end = max(self.iteration_ends[iteration].values())
            previous_control, previous_counters = control, counters
        return report

    def trace_hash(self) -> str:
        return self.engine.trace_hash()
