import pytest

from apps.domain.exceptions import MissingLink
from apps.domain.types import LinkSpec
from apps.simnet.churn import CRASH, REJOIN, inject_churn
from apps.simnet.engine import EventKind, SimulationEngine
from apps.simnet.exceptions import EventStorm
from apps.simnet.messages import Message, MessageType
from apps.simnet.rng import RngStreams


def _links(**overrides):
    links = {(1, 2): LinkSpec(1, 2, 10, 0.1), (2, 1): LinkSpec(2, 1, 10, 0.1)}
    links.update(overrides)
    return lambda src, dst: links.get((src, dst))


def test_send_delay_is_latency_plus_transfer():
    engine = SimulationEngine(_links())
    event = engine.send(Message(MessageType.ACTIVATION, 1, 2, {"mb": 1}, size=8))
    assert event.time == pytest.approx(90)


def test_control_message_delay_is_latency():
    engine = SimulationEngine(_links())
    event = engine.send(Message(MessageType.PING, 1, 2))
    assert event.time == pytest.approx(10)


def test_send_without_link():
    engine = SimulationEngine(_links())
    with pytest.raises(MissingLink):
        engine.send(Message(MessageType.PING, 1, 3))


def test_messages_to_crashed_nodes_are_dropped():
    delivered = []
    engine = SimulationEngine(_links(), is_alive=lambda node: node != 2)
    engine.bind(delivered.append)
    engine.send(Message(MessageType.PING, 1, 2))
    trace = engine.run_until()
    assert delivered == []
    assert engine.dropped == 1
    assert trace[0].kind == "drop"


def test_run_until_empty_queue():
    engine = SimulationEngine(_links())
    assert engine.run_until() == []
    assert engine.now == 0


def test_single_timer():
    engine = SimulationEngine(_links())
    engine.schedule(5, EventKind.TIMER, 1, {"name": "tick"})
    trace = engine.run_until()
    assert len(trace) == 1
    assert engine.now == 5


def test_same_time_events_run_in_insertion_order():
    seen = []
    engine = SimulationEngine(_links())
    engine.bind(lambda event: seen.append(event.payload["name"]))
    engine.schedule(3, EventKind.TIMER, 1, {"name": "first"})
    engine.schedule(3, EventKind.TIMER, 1, {"name": "second"})
    engine.run_until()
    assert seen == ["first", "second"]


def test_clock_is_monotone_and_time_limit_respected():
    engine = SimulationEngine(_links())
    for delay in (7, 2, 9, 4):
        engine.schedule(delay, EventKind.TIMER, 1)
    trace = engine.run_until(until=5)
    assert [r.time for r in trace] == [2, 4]
    assert engine.now == 5
    trace = engine.run_until()
    assert [r.time for r in trace] == [7, 9]


def test_predicate_stops_run():
    engine = SimulationEngine(_links())
    for delay in range(1, 6):
        engine.schedule(delay, EventKind.TIMER, 1)
    engine.run_until(predicate=lambda: engine.now >= 3)
    assert engine.now == 3
    assert engine.pending == 2


def test_event_storm():
    engine = SimulationEngine(_links(), max_queue=3)
    with pytest.raises(EventStorm):
        for delay in range(5):
            engine.schedule(delay, EventKind.TIMER, 1)


def test_latency_bound_caps_jittered_delay():
    engine = SimulationEngine(_links(), rng=RngStreams(5), jitter=50, latency_bound=12)
    for _ in range(50):
        engine.send(Message(MessageType.PING, 1, 2))
    assert engine.max_observed_delay <= 12


def test_congestion_serializes_transfers():
    engine = SimulationEngine(_links(), congestion=True)
    first = engine.send(Message(MessageType.ACTIVATION, 1, 2, size=8))
    second = engine.send(Message(MessageType.ACTIVATION, 1, 2, size=8))
    assert first.time == pytest.approx(90)
    assert second.time == pytest.approx(170)


def _trace_hash(seed):
    engine = SimulationEngine(_links(), rng=RngStreams(seed), jitter=3)
    engine.bind(lambda event: None)
    for i in range(20):
        engine.send(Message(MessageType.PING, 1, 2, {"nonce": i}))
    engine.run_until()
    return engine.trace_hash()


def test_trace_hash_is_deterministic():
    assert _trace_hash(9) == _trace_hash(9)
    assert _trace_hash(9) != _trace_hash(10)


def test_export_trace(tmp_path):
    engine = SimulationEngine(_links())
    engine.schedule(1, EventKind.TIMER, 1, {"name": "tick"})
    engine.run_until()
    path = engine.export_trace(tmp_path / "trace.jsonl")
    lines = path.read_text().splitlines()
    assert len(lines) == 1
    assert '"kind": "timer"' in lines[0]


def test_substreams_are_independent():
    a = RngStreams(42)
    b = RngStreams(42)
    b.stream("churn").random(100)
    assert a.stream("annealing-3").random() == b.stream("annealing-3").random()


def test_churn_extremes():
    relays = list(range(16))
    rng = RngStreams(1).stream("churn")
    assert inject_churn(0.0, relays, [], rng, 0, 100) == []
    events = inject_churn(1.0, relays, [], rng, 0, 100)
    assert sorted(e.node for e in events) == relays
    assert all(e.action == CRASH and 0 <= e.time <= 100 for e in events)


def test_churn_rejoins_at_boundary_and_is_reproducible():
    def plan():
        rng = RngStreams(42).stream("churn")
        return inject_churn(0.1, range(16), [20, 21], rng, 50, 100)

    first, second = plan(), plan()
    assert first == second
    assert all(e.time == 50 for e in first if e.action == REJOIN)


def test_churn_rejects_bad_probability():
    with pytest.raises(ValueError):
        inject_churn(1.5, [1], [], RngStreams(0).stream("churn"), 0, 1)
