# ===== apps/harness/metrics.py =====
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import pandas as pd

from apps.domain.types import NodeId

from .exceptions import ZeroMicrobatches

logger = logging.getLogger(__name__)

COMPLETED = "completed"
DEFERRED = "deferred"
ABANDONED = "abandoned"


@dataclass(frozen=True)
class WorkItem:
    """One simulated compute slice charged to a node"""

    node: NodeId
    microbatch: int
    kind: str
    duration: float
    attempt: int = 0
    iteration: int = 0


@dataclass(frozen=True)
class ResolvedMicrobatch:
    origin: NodeId
    microbatch: int
    outcome: str
    path: tuple
    attempt: int = 0
    iteration: int = 0


@dataclass(frozen=True)
class DataTransit:
    """Link time of one ACTIVATION / GRADIENT / REPAIR_ACTIVATION hop"""

    microbatch: int
    attempt: int
    src: NodeId
    dst: NodeId
    delay: float
    iteration: int = 0


# ============================================================
# METRIC FUNCTIONS
# ============================================================

def iteration_duration(finish_times: Mapping[NodeId, float], previous_end: float = 0.0) -> float:
    """Slowest data node's update end minus the previous iteration's end"""
    if not finish_times:
        return 0.0
    return max(finish_times.values()) - previous_end


def time_per_microbatch(finish_times: Mapping[NodeId, float], completed: int, previous_end: float = 0.0,
                        iteration: int = 0) -> float:
    if completed <= 0:
        raise ZeroMicrobatches(iteration)
    return iteration_duration(finish_times, previous_end) / completed


def _final_attempts(resolved: Iterable[ResolvedMicrobatch]) -> Dict[int, ResolvedMicrobatch]:
    return {r.microbatch: r for r in resolved}


def wasted_compute(work: Iterable[WorkItem], resolved: Iterable[ResolvedMicrobatch]) -> float:
    """Compute spent on microbatches excluded from aggregation or off their final path.

    Work of a completed microbatch is useful only when it belongs to the final attempt
    and ran at a node on the final path.
    """
    final = _final_attempts(resolved)
    wasted = 0.0
    for item in work:
        outcome = final.get(item.microbatch)
        if outcome is None or outcome.outcome != COMPLETED:
            wasted += item.duration
        elif item.attempt != outcome.attempt or item.node not in outcome.path:
            wasted += item.duration
    return wasted


def communication_time(transits: Iterable[DataTransit], resolved: Iterable[ResolvedMicrobatch]) -> float:
    """Summed link time of data messages along completed final paths"""
    final = _final_attempts(resolved)
    total = 0.0
    for transit in transits:
        outcome = final.get(transit.microbatch)
        if outcome is None or outcome.outcome != COMPLETED or transit.attempt != outcome.attempt:
            continue
        if transit.src in outcome.path and transit.dst in outcome.path:
            total += transit.delay
    return total


def node_addition_improvement(before_cost: float, after_cost: float) -> float:
    """(before - after) / before; negative when the addition made things worse"""
    if before_cost <= 0 or math.isinf(before_cost):
        raise ValueError(f"Improvement needs a positive finite baseline cost, got {before_cost}")
    return (before_cost - after_cost) / before_cost


# ============================================================
# REPORT
# ============================================================

@dataclass
class IterationMetrics:
    iteration: int
    duration: float
    time_per_microbatch: Optional[float]
    throughput: int
    emitted: int
    wasted_compute_time: float
    communication_time: float
    protocol_messages: int
    recovery: Dict[str, int] = field(default_factory=dict)

    def as_row(self) -> dict:
        row = asdict(self)
        recovery = row.pop("recovery")
        row.update({f"recovery_{k}": v for k, v in sorted(recovery.items())})
        return row


@dataclass
class MetricsReport:
    scenario: str
    seed: int
    routing: str
    recovery: str
    iterations: List[IterationMetrics] = field(default_factory=list)

    @property
    def total_throughput(self) -> int:
        return sum(m.throughput for m in self.iterations)

    def aggregate(self) -> dict:
        if not self.iterations:
            return {}
        tpm = [m.time_per_microbatch for m in self.iterations if m.time_per_microbatch is not None]
        recovery = Counter()
        for m in self.iterations:
            recovery.update(m.recovery)
        return {
            "iterations": len(self.iterations),
            "time_per_microbatch": sum(tpm) / len(tpm) if tpm else None,
            "throughput": self.total_throughput / len(self.iterations),
            "wasted_compute_time": sum(m.wasted_compute_time for m in self.iterations),
            "communication_time": sum(m.communication_time for m in self.iterations),
            "protocol_messages": sum(m.protocol_messages for m in self.iterations),
            "recovery": dict(sorted(recovery.items())),
        }

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([m.as_row() for m in self.iterations])


def build_iteration_metrics(
    iteration: int,
    finish_times: Mapping[NodeId, float],
    previous_end: float,
    work: Sequence[WorkItem],
    resolved: Sequence[ResolvedMicrobatch],
    transits: Sequence[DataTransit],
    protocol_messages: int = 0,
    recovery: Optional[Mapping[str, int]] = None,
) -> IterationMetrics:
    work = [w for w in work if w.iteration == iteration]
    resolved = [r for r in resolved if r.iteration == iteration]
    transits = [t for t in transits if t.iteration == iteration]
    completed = sum(1 for r in resolved if r.outcome == COMPLETED)
    try:
        tpm = time_per_microbatch(finish_times, completed, previous_end, iteration)
    except ZeroMicrobatches as exc:
        logger.warning(str(exc))
        tpm = None
    return IterationMetrics(
        iteration=iteration,
        duration=iteration_duration(finish_times, previous_end),
        time_per_microbatch=tpm,
        throughput=completed,
        emitted=len(resolved),
        wasted_compute_time=wasted_compute(work, resolved),
        communication_time=communication_time(transits, resolved),
        protocol_messages=protocol_messages,
        recovery=dict(recovery or {}),
    )
