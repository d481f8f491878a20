import pytest

from apps.domain.builders import layered_topology
from apps.domain.types import LinkSpec
from apps.domain.validation import NEXT, stage_neighbors
from apps.membership.admission import (
    Candidate,
    UtilizationEntry,
    UtilizationFlood,
    UtilizationReport,
    assign_candidates,
    elect_leader,
    entries_from_payload,
    entries_to_payload,
    join_node,
    post_admission_capacity,
    rank_stages,
)
from apps.membership.exceptions import FloodTimeout, InvalidCandidate, NoDataNodeAlive, UnknownStage
from apps.membership.registry import Registry


def _report(caps, flows):
    entries = [UtilizationEntry(10 + s, s, c, f) for s, (c, f) in enumerate(zip(caps, flows))]
    return UtilizationReport.from_entries(entries, num_stages=len(caps))


def test_elect_lowest_alive_data_node():
    assert elect_leader([7, 3]) == 3
    assert elect_leader([7]) == 7


def test_elect_without_data_nodes():
    with pytest.raises(NoDataNodeAlive):
        elect_leader([])


def test_utilization_ratios():
    report = _report([2, 3, 4], [2, 2, 2])
    assert report.utilizations() == pytest.approx({0: 1.0, 1: 2 / 3, 2: 0.5})


def test_zero_flows_give_zero_utilization():
    assert set(_report([2, 3], [0, 0]).utilizations().values()) == {0.0}


def test_rank_by_utilization_then_stage():
    assert rank_stages(_report([2, 3, 4], [2, 2, 2])) == [0, 1, 2]
    assert rank_stages(_report([2, 2], [1, 1])) == [0, 1]
    assert rank_stages(_report([4], [1])) == [0]


def test_flood_merges_and_reports_partial():
    flood = UtilizationFlood(query_id=1, num_stages=3, deadline=100.0)
    assert flood.merge([UtilizationEntry(5, 0, 2, 1)])
    assert not flood.merge([UtilizationEntry(5, 0, 2, 1)])
    flood.merge(entries_from_payload(entries_to_payload([UtilizationEntry(6, 1, 3, 2)])))
    report = flood.report()
    assert not report.complete
    assert set(report.stages) == {0, 1}
    with pytest.raises(FloodTimeout):
        flood.report(strict=True)


def test_flood_covers_listed_nodes_only_when_every_stage_reported():
    flood = UtilizationFlood(query_id=1, num_stages=2, deadline=100.0)
    flood.merge([UtilizationEntry(5, 0, 2, 1)])
    assert not flood.covers([5])
    flood.merge([UtilizationEntry(6, 1, 3, 2)])
    assert flood.covers([5, 6])
    assert not flood.covers([5, 6, 7])
    assert not flood.covers([])


def test_assign_largest_candidate_to_busiest_stage():
    candidates = [Candidate(1, 5), Candidate(2, 2)]
    assert assign_candidates(candidates, [1, 3]) == {1: 1, 2: 3}


def test_assign_defers_leftovers():
    candidates = [Candidate(1, 2), Candidate(2, 2), Candidate(3, 9)]
    assert assign_candidates(candidates, [0, 1]) == {3: 0, 1: 1}
    assert assign_candidates([], [0, 1]) == {}


def test_candidate_capacity_must_be_positive():
    with pytest.raises(InvalidCandidate):
        Candidate(4, 0)


def test_admission_grows_bottleneck_capacity():
    topology = layered_topology([[1], [2, 2]], data_capacities=(2,))
    report = _report([1, 4], [1, 1])
    assignment = assign_candidates([Candidate(50, 3)], rank_stages(report))
    assert post_admission_capacity(topology, assignment, [Candidate(50, 3)])[0] == 4


def test_join_node_appears_as_neighbor():
    topology = layered_topology([[1], [1], [1]], data_capacities=(1,))
    links = [LinkSpec(a, b, 1.0, 1.0) for a, b in ((9, 1), (1, 9), (9, 3), (3, 9))]
    joined = join_node(topology, Candidate(9, 2), stage=1, links=links)
    assert 9 in stage_neighbors(joined, 1, NEXT)
    assert joined.node(9).capacity == 2


def test_join_unknown_stage():
    topology = layered_topology([[1]], data_capacities=(1,))
    with pytest.raises(UnknownStage):
        join_node(topology, Candidate(9, 1), stage=3)


def test_registry_lookup_delay_and_ttl():
    registry = Registry(ttl=10.0, lookup_delay=2.0)
    registry.register(1, 0, False, now=0.0)
    registry.register(2, 0, False, now=5.0)
    assert registry.stage_members(0, now=6.0) == [1]
    assert registry.stage_members(0, now=7.0) == [1, 2]
    registry.refresh(2, now=20.0)
    assert registry.stage_members(0, now=20.0) == [2]


def test_registry_respects_routable_iteration():
    registry = Registry(ttl=10.0)
    registry.register(3, 1, False, now=0.0, routable_from=2)
    assert registry.stage_members(1, now=1.0, iteration=1) == []
    assert registry.stage_members(1, now=1.0, iteration=2) == [3]
