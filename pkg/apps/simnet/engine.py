# ===== apps/simnet/engine.py =====
import hashlib
import heapq
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, List, Optional

from apps.domain.exceptions import MissingLink
from apps.domain.types import LinkSpec, NodeId

from .exceptions import EventStorm
from .messages import Message
from .rng import RngStreams

logger = logging.getLogger(__name__)

DEFAULT_MAX_QUEUE = 200_000


class EventKind(str, Enum):
    DELIVER = "deliver"
    COMPUTE_DONE = "compute_done"
    CRASH = "crash"
    JOIN = "join"
    TIMER = "timer"


@dataclass(order=True)
class Event:
    time: float
    sequence: int
    kind: EventKind = field(compare=False)
    node: Optional[NodeId] = field(compare=False, default=None)
    payload: Any = field(compare=False, default=None)

    def summary(self) -> str:
        if hasattr(self.payload, "summary"):
            return self.payload.summary()
        if isinstance(self.payload, dict):
            return " ".join(f"{k}={v!r}" for k, v in sorted(self.payload.items())
                            if v is None or isinstance(v, (bool, int, float, str)))
        return "" if self.payload is None else str(self.payload)


@dataclass(frozen=True)
class Envelope:
    """A message in flight, with its send time and link delay"""

    message: Message
    sent_at: float
    delay: float

    def summary(self) -> str:
        return self.message.summary()


@dataclass(frozen=True)
class TraceRecord:
    time: float
    sequence: int
    kind: str
    node: Optional[NodeId]
    summary: str

    def to_line(self) -> str:
        return json.dumps(
            {"time": self.time, "sequence": self.sequence, "kind": self.kind,
             "node": self.node, "summary": self.summary},
            sort_keys=True,
        )


class SimulationEngine:
    """Single-threaded event loop ordered by (time, sequence)"""

    def __init__(
        self,
        link_lookup: Callable[[NodeId, NodeId], Optional[LinkSpec]],
        rng: Optional[RngStreams] = None,
        is_alive: Optional[Callable[[NodeId], bool]] = None,
        max_queue: int = DEFAULT_MAX_QUEUE,
        jitter: float = 0.0,
        latency_bound: Optional[float] = None,
        congestion: bool = False,
        record_trace: bool = True,
    ):
        self.link_lookup = link_lookup
        self.rng = rng or RngStreams(0)
        self.is_alive = is_alive or (lambda node: True)
        self.max_queue = max_queue
        self.jitter = jitter
        self.latency_bound = latency_bound
        self.congestion = congestion
        self.record_trace = record_trace

        self.now = 0.0
        self._queue: List[Event] = []
        self._sequence = 0
        self._handler: Optional[Callable[[Event], None]] = None
        self._link_busy = {}

        self.trace: List[TraceRecord] = []
        self.message_counts = Counter()
        self.dropped = 0
        self.max_observed_delay = 0.0

    def bind(self, handler: Callable[[Event], None]):
        self._handler = handler

    # ============================================================
    # SCHEDULING
    # ============================================================

    def schedule_at(self, time: float, kind: EventKind, node: Optional[NodeId] = None, payload=None) -> Event:
        if time < self.now:
            time = self.now
        event = Event(time, self._sequence, kind, node, payload)
        self._sequence += 1
        heapq.heappush(self._queue, event)
        if len(self._queue) > self.max_queue:
            raise EventStorm(len(self._queue), self.max_queue, self.now)
        return event

    def schedule(self, delay: float, kind: EventKind, node: Optional[NodeId] = None, payload=None) -> Event:
        return self.schedule_at(self.now + max(delay, 0.0), kind, node, payload)

    def transit_delay(self, src: NodeId, dst: NodeId, size: float) -> float:
        link = self.link_lookup(src, dst)
        if link is None:
            raise MissingLink(src, dst)
        latency = link.latency
        if self.jitter > 0:
            latency += float(self.rng.stream("network").uniform(0.0, self.jitter))
        if self.latency_bound is not None:
            latency = min(latency, self.latency_bound)
        transfer = size / link.bandwidth if size else 0.0
        if not self.congestion or not transfer:
            return latency + transfer
        start = max(self.now, self._link_busy.get((src, dst), self.now))
        self._link_busy[(src, dst)] = start + transfer
        return (start - self.now) + transfer + latency

    def send(self, message: Message) -> Event:
        delay = self.transit_delay(message.src, message.dst, message.size)
        self.message_counts[message.type] += 1
        self.max_observed_delay = max(self.max_observed_delay, delay)
        envelope = Envelope(message, self.now, delay)
        return self.schedule(delay, EventKind.DELIVER, message.dst, envelope)

    @property
    def pending(self) -> int:
        return len(self._queue)

    # ============================================================
    # EXECUTION
    # ============================================================

    def _record(self, event: Event, kind: str):
        if self.record_trace:
            self.trace.append(TraceRecord(event.time, event.sequence, kind, event.node, event.summary()))

    def step(self) -> Optional[Event]:
        if not self._queue:
            return None
        event = heapq.heappop(self._queue)
        self.now = event.time
        if event.kind == EventKind.DELIVER and not self.is_alive(event.node):
            self.dropped += 1
            self._record(event, "drop")
            return event
        self._record(event, event.kind.value)
        if self._handler is not None:
            self._handler(event)
        return event

    def run_until(
        self,
        predicate: Optional[Callable[[], bool]] = None,
        until: Optional[float] = None,
    ) -> List[TraceRecord]:
        """Run until the predicate holds, the time limit is passed, or the queue drains"""
        start = len(self.trace)
        while self._queue:
            if until is not None and self._queue[0].time > until:
                self.now = max(self.now, until)
                break
            self.step()
            if predicate is not None and predicate():
                break
        return self.trace[start:]

    # ============================================================
    # TRACE EXPORT
    # ============================================================

    def trace_lines(self) -> List[str]:
        return [record.to_line() for record in self.trace]

    def trace_hash(self) -> str:
        digest = hashlib.sha256()
        for line in self.trace_lines():
            digest.update(line.encode("utf-8"))
            digest.update(b"\n")
        return digest.hexdigest()

    def export_trace(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as fh:
            for line in self.trace_lines():
                fh.write(line + "\n")
        logger.info(f"Trace with {len(self.trace)} records written to {path}")
        return path
