import pytest

from apps.protocol.ledger import CostTable, FlowLedger, FlowRecord
from apps.recovery.detection import (
    Deny,
    ExclusionList,
    ExclusionReason,
    PeerStats,
    Reroute,
    can_accept,
    observe_complete,
    on_forward_timeout,
)
from apps.recovery.exceptions import InvalidSample, IrreparablePath
from apps.recovery.repair import PIPELINE_RESTART, RepairChase, plan_backward_repair


def test_ewma_two_samples():
    stats = PeerStats()
    observe_complete(stats, 5, 2.0)
    observe_complete(stats, 5, 4.0)
    assert stats.ewma[5] == 3.0
    assert stats.threshold(5) == 9.0


def test_ewma_first_sample_initializes():
    stats = observe_complete(PeerStats(), 5, 10.0)
    assert stats.threshold(5) == 30.0
    assert stats.threshold(6, default=7.0) == 7.0


def test_zero_rtt_rejected():
    with pytest.raises(InvalidSample):
        observe_complete(PeerStats(), 5, 0.0)


def test_exclusion_released_only_by_matching_signal():
    exclusion = ExclusionList()
    exclusion.exclude(3, ExclusionReason.DENY)
    assert not exclusion.release(3, ExclusionReason.TIMEOUT)
    assert 3 in exclusion
    assert exclusion.release(3, ExclusionReason.DENY)
    assert 3 not in exclusion


def test_can_accept():
    ledger = FlowLedger(1, capacity=1)
    assert can_accept(True, ledger)
    assert not can_accept(True, ledger, denying=True)
    assert not can_accept(False, ledger)
    ledger.add(FlowRecord(10, 0, 1.0, downstream=2, downstream_flow=20))
    assert not can_accept(True, ledger)


def _advertisers():
    table = CostTable(1)
    table.update(2, 0, 3.0)
    table.update(3, 0, 4.0)
    return table


def test_forward_timeout_reroutes_to_alternative():
    exclusion = ExclusionList()
    decision = on_forward_timeout(2, 0, exclusion, _advertisers(), {2: 1.0, 3: 1.0})
    assert decision == Reroute(3, 4.0)
    assert exclusion.reason(2) == ExclusionReason.TIMEOUT


def test_forward_timeout_without_alternative_denies():
    table = CostTable(1)
    table.update(2, 0, 3.0)
    assert isinstance(on_forward_timeout(2, 0, ExclusionList(), table, {2: 1.0}), Deny)


PATH = [0, 11, 12, 13, 0]


def _chooser(stage, previous, dead):
    return 100 + stage


def test_single_crash_recomputes_one_stage():
    plan = plan_backward_repair(7, PATH, lambda n: n != 12, _chooser)
    assert plan.new_path == [0, 11, 101, 13, 0]
    assert plan.recomputed_stages == 1
    assert plan.resume_from == 1


def test_spurious_timeout_needs_no_repair():
    plan = plan_backward_repair(7, PATH, lambda n: True, _chooser)
    assert not plan.needed
    assert plan.recomputed_stages == 0


def test_two_crashes_recompute_two_stages():
    plan = plan_backward_repair(7, PATH, lambda n: n not in (12, 13), _chooser)
    assert plan.recomputed_stages == 2
    assert plan.new_path == [0, 11, 101, 102, 0]


def test_pipeline_restart_recomputes_every_stage():
    plan = plan_backward_repair(7, PATH, lambda n: n != 12, _chooser, mode=PIPELINE_RESTART)
    assert plan.recomputed_stages == 3


def test_empty_stage_is_irreparable():
    with pytest.raises(IrreparablePath):
        plan_backward_repair(7, PATH, lambda n: n != 12, lambda stage, previous, dead: None)


def test_chase_walks_the_path():
    chase = RepairChase(7, PATH)
    assert chase.current == 11
    assert chase.on_ack(11, has_gradient=False) == 12
    assert chase.on_timeout(12) == 13
    assert chase.on_ack(13, has_gradient=True) is None
    assert chase.done
    assert chase.dead == [12] and chase.holders == [13]
