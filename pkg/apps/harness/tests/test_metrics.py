import pytest

from apps.harness.exceptions import ZeroMicrobatches
from apps.harness.metrics import (
    ABANDONED,
    COMPLETED,
    DEFERRED,
    DataTransit,
    IterationMetrics,
    MetricsReport,
    ResolvedMicrobatch,
    WorkItem,
    build_iteration_metrics,
    communication_time,
    node_addition_improvement,
    time_per_microbatch,
    wasted_compute,
)


# ====
# time per microbatch
# ====

def test_time_per_microbatch_divides_iteration_time():
    assert time_per_microbatch({0: 4.0}, completed=8) == 0.5


def test_slowest_data_node_sets_the_numerator():
    assert time_per_microbatch({0: 3.0, 1: 4.0}, completed=1) == 4.0


def test_duration_is_measured_from_previous_end():
    assert time_per_microbatch({0: 14.0}, completed=2, previous_end=10.0) == 2.0


def test_zero_microbatches_raises():
    with pytest.raises(ZeroMicrobatches):
        time_per_microbatch({0: 4.0}, completed=0)


def test_zero_microbatches_reported_as_absent():
    resolved = [ResolvedMicrobatch(0, 1, DEFERRED, (0, 2), 0, 0)]
    metrics = build_iteration_metrics(0, {0: 4.0}, 0.0, [], resolved, [])
    assert metrics.time_per_microbatch is None
    assert metrics.throughput == 0
    assert metrics.emitted == 1


# ====
# wasted compute
# ====

def test_deferred_microbatch_wastes_its_compute():
    work = [WorkItem(2, 7, "forward", 4.0), WorkItem(3, 7, "forward", 4.0)]
    resolved = [ResolvedMicrobatch(0, 7, DEFERRED, (0, 2, 3), 0, 0)]
    assert wasted_compute(work, resolved) == 8.0


def test_crash_free_work_is_not_wasted():
    work = [WorkItem(2, 7, "forward", 4.0), WorkItem(2, 7, "backward", 4.0)]
    resolved = [ResolvedMicrobatch(0, 7, COMPLETED, (0, 2, 0), 0, 0)]
    assert wasted_compute(work, resolved) == 0.0


def test_work_off_the_final_path_is_wasted():
    work = [WorkItem(2, 7, "forward", 1.0), WorkItem(5, 7, "forward", 1.0), WorkItem(3, 7, "forward", 1.0)]
    resolved = [ResolvedMicrobatch(0, 7, COMPLETED, (0, 2, 3, 0), 0, 0)]
    assert wasted_compute(work, resolved) == 1.0


def test_earlier_attempts_are_wasted():
    work = [WorkItem(2, 7, "forward", 3.0, attempt=0), WorkItem(2, 7, "forward", 3.0, attempt=1)]
    resolved = [ResolvedMicrobatch(0, 7, COMPLETED, (0, 2, 0), 1, 0)]
    assert wasted_compute(work, resolved) == 3.0


def test_abandoned_and_unresolved_work_is_wasted():
    work = [WorkItem(2, 7, "forward", 2.0), WorkItem(2, 8, "forward", 5.0)]
    resolved = [ResolvedMicrobatch(0, 7, ABANDONED, (0, 2), 0, 0)]
    assert wasted_compute(work, resolved) == 7.0


# ====
# communication time
# ====

def test_communication_time_counts_final_path_hops():
    resolved = [ResolvedMicrobatch(0, 7, COMPLETED, (0, 2, 0), 1, 0)]
    transits = [
        DataTransit(7, 1, 0, 2, 1.5),
        DataTransit(7, 1, 2, 0, 2.5),
        DataTransit(7, 0, 0, 4, 9.0),
        DataTransit(8, 0, 0, 2, 9.0),
    ]
    assert communication_time(transits, resolved) == 4.0


# ====
# node addition
# ====

@pytest.mark.parametrize("before, after, expected", [
    (10.0, 8.0, 0.2),
    (10.0, 10.0, 0.0),
    (8.0, 10.0, -0.25),
])
def test_node_addition_improvement(before, after, expected):
    assert node_addition_improvement(before, after) == pytest.approx(expected)


def test_improvement_needs_positive_baseline():
    with pytest.raises(ValueError):
        node_addition_improvement(0.0, 1.0)


# ====
# synthetic trace
# ====

def test_three_event_trace_matches_hand_calculation():
    # mb 1 completes via 0 -> 2 -> 0, mb 2 is denied at 3 after a forward on 2
    work = [
        WorkItem(2, 1, "forward", 1.0),
        WorkItem(2, 1, "backward", 2.0),
        WorkItem(2, 2, "forward", 1.0),
    ]
    resolved = [
        ResolvedMicrobatch(0, 1, COMPLETED, (0, 2, 0), 0, 0),
        ResolvedMicrobatch(0, 2, DEFERRED, (0, 2), 0, 0),
    ]
    transits = [DataTransit(1, 0, 0, 2, 0.5), DataTransit(1, 0, 2, 0, 0.5), DataTransit(2, 0, 0, 2, 0.5)]

    metrics = build_iteration_metrics(0, {0: 6.0}, 0.0, work, resolved, transits, protocol_messages=12,
                                      recovery={"deny": 1})

    assert metrics.duration == 6.0
    assert metrics.time_per_microbatch == 6.0
    assert metrics.throughput == 1
    assert metrics.emitted == 2
    assert metrics.wasted_compute_time == 1.0
    assert metrics.communication_time == 1.0
    assert metrics.as_row()["recovery_deny"] == 1


def test_metrics_only_see_their_iteration():
    work = [WorkItem(2, 1, "forward", 1.0, iteration=0), WorkItem(2, 9, "forward", 4.0, iteration=1)]
    resolved = [ResolvedMicrobatch(0, 1, COMPLETED, (0, 2, 0), 0, 0)]
    metrics = build_iteration_metrics(0, {0: 2.0}, 0.0, work, resolved, [])
    assert metrics.wasted_compute_time == 0.0


def test_report_aggregate():
    report = MetricsReport("s", 0, "gwtf", "gwtf", [
        IterationMetrics(0, 4.0, 0.5, 8, 8, 0.0, 1.0, 10, {"deny": 1}),
        IterationMetrics(1, 6.0, None, 0, 8, 3.0, 0.0, 10, {"deny": 2, "crash": 1}),
    ])
    totals = report.aggregate()
    assert totals["time_per_microbatch"] == 0.5
    assert totals["throughput"] == 4.0
    assert totals["wasted_compute_time"] == 3.0
    assert totals["recovery"] == {"crash": 1, "deny": 3}
    assert report.total_throughput == 8

    frame = report.to_frame()
    assert list(frame["iteration"]) == [0, 1]
    assert frame["recovery_crash"].fillna(0).tolist() == [0, 1]
