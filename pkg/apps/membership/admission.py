# ===== apps/membership/admission.py =====
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

from apps.domain.types import LinkSpec, NodeId, NodeRole, NodeSpec, StageId, Topology

from .exceptions import FloodTimeout, InvalidCandidate, NoDataNodeAlive, UnknownStage

logger = logging.getLogger(__name__)


# ============================================================
# LEADER
# ============================================================

def elect_leader(alive_data_nodes: Iterable[NodeId]) -> NodeId:
    alive = list(alive_data_nodes)
    if not alive:
        raise NoDataNodeAlive()
    return min(alive)


# ============================================================
# UTILIZATION
# ============================================================

@dataclass(frozen=True)
class UtilizationEntry:
    node: NodeId
    stage: StageId
    capacity: int
    flows: int


@dataclass(frozen=True)
class StageUtilization:
    stage: StageId
    capacity: int
    flows: int

    @property
    def utilization(self) -> float:
        return self.flows / self.capacity


@dataclass
class UtilizationReport:
    stages: Dict[StageId, StageUtilization] = field(default_factory=dict)
    complete: bool = True

    @classmethod
    def from_entries(cls, entries: Iterable[UtilizationEntry], num_stages: Optional[int] = None) -> "UtilizationReport":
        totals: Dict[StageId, List[int]] = {}
        for entry in entries:
            cap_flows = totals.setdefault(entry.stage, [0, 0])
            cap_flows[0] += entry.capacity
            cap_flows[1] += entry.flows
        stages = {
            stage: StageUtilization(stage, cap, flows)
            for stage, (cap, flows) in sorted(totals.items()) if cap > 0
        }
        complete = num_stages is None or all(s in stages for s in range(num_stages))
        return cls(stages, complete)

    def utilizations(self) -> Dict[StageId, float]:
        return {stage: s.utilization for stage, s in self.stages.items()}


class UtilizationFlood:
    """Leader-side and relay-side bookkeeping of one utilization query.

    Every node merges the entries it sees; a node forwards only when its merged
    set grew, so each query terminates.
    """

    def __init__(self, query_id: int, num_stages: int, deadline: float):
        self.query_id = query_id
        self.num_stages = num_stages
        self.deadline = deadline
        self.entries: Dict[NodeId, UtilizationEntry] = {}

    def merge(self, entries: Iterable[UtilizationEntry]) -> bool:
        grew = False
        for entry in entries:
            if entry.node not in self.entries:
                self.entries[entry.node] = entry
                grew = True
        return grew

    def covers(self, nodes: Iterable[NodeId]) -> bool:
        """True once every stage has reported and each listed node has contributed"""
        nodes = set(nodes)
        if not nodes or not nodes <= set(self.entries):
            return False
        return UtilizationReport.from_entries(self.entries.values(), self.num_stages).complete

    def report(self, strict: bool = False) -> UtilizationReport:
        report = UtilizationReport.from_entries(self.entries.values(), self.num_stages)
        if not report.complete:
            missing = set(range(self.num_stages)) - set(report.stages)
            if strict:
                raise FloodTimeout(self.query_id, missing)
            logger.warning(f"Utilization query {self.query_id} is partial, missing stages {sorted(missing)}")
        return report


def entries_to_payload(entries: Iterable[UtilizationEntry]) -> List[list]:
    return [[e.node, e.stage, e.capacity, e.flows] for e in sorted(entries, key=lambda e: e.node)]


def entries_from_payload(payload: Sequence[Sequence[int]]) -> List[UtilizationEntry]:
    return [UtilizationEntry(*row) for row in payload]


def rank_stages(report: UtilizationReport) -> List[StageId]:
    """Most utilized first; ties go to the lower stage"""
    return sorted(report.stages, key=lambda s: (-report.stages[s].utilization, s))


# ============================================================
# CANDIDATES
# ============================================================

@dataclass(frozen=True)
class Candidate:
    id: NodeId
    capacity: int
    announced_at: float = 0.0
    compute_cost: float = 0.0

    def __post_init__(self):
        if self.capacity < 1:
            raise InvalidCandidate(self.id, f"capacity {self.capacity} < 1")


def assign_candidates(candidates: Iterable[Candidate], ranked_stages: Sequence[StageId]) -> Dict[NodeId, StageId]:
    """Largest candidate to the most utilized stage; leftovers wait for the next round"""
    ordered = sorted(candidates, key=lambda c: (-c.capacity, c.id))
    return {c.id: stage for c, stage in zip(ordered, ranked_stages)}


def join_node(topology: Topology, candidate: Candidate, stage: StageId,
              links: Iterable[LinkSpec] = ()) -> Topology:
    if not 0 <= stage < topology.num_stages:
        raise UnknownStage(stage, topology.num_stages)
    if topology.has_node(candidate.id):
        updated = topology.with_stage(candidate.id, stage).with_alive(candidate.id, True)
        return updated.with_nodes((), links)
    spec = NodeSpec(candidate.id, NodeRole.RELAY, stage, candidate.capacity, candidate.compute_cost)
    logger.info(f"Node {candidate.id} (capacity {candidate.capacity}) joins stage {stage}")
    return topology.with_nodes((spec,), links)


def post_admission_capacity(topology: Topology, assignment: Mapping[NodeId, StageId],
                            candidates: Iterable[Candidate]) -> Dict[StageId, int]:
    capacity = {s: topology.stage_capacity(s) for s in range(topology.num_stages)}
    for candidate in candidates:
        if candidate.id in assignment:
            capacity[assignment[candidate.id]] += candidate.capacity
    return capacity
