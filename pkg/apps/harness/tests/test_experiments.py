import pytest

from apps.harness.experiments import (
    CAPACITY_FIRST,
    OPTIMAL,
    RANDOM,
    FlowTestResult,
    OracleComparison,
    compare,
    mean_metric,
    recovery_for,
    run_addition_test,
    run_flow_test,
    run_oracle,
)
from apps.harness.scenarios import ADDITION, FLOW, Distribution, ScenarioConfig, load_scenario
from apps.lifecycle.peer import GREEDY
from apps.recovery.repair import GWTF, PIPELINE_RESTART


@pytest.fixture
def small_flow():
    return ScenarioConfig(name="small-flow", kind=FLOW, stages=3, relays=9, microbatches=4,
                          capacity=Distribution(1, 3), interlayer=Distribution(1, 20))


@pytest.fixture
def small_addition():
    return ScenarioConfig(name="small-addition", kind=ADDITION, stages=2, relays=4, microbatches=8,
                          capacity=Distribution(1, 5), interlayer=Distribution(1, 20),
                          intralayer=Distribution(50, 100, phi=True), candidates=2)


def test_greedy_pairs_with_pipeline_restart():
    assert recovery_for(GREEDY) == PIPELINE_RESTART
    assert recovery_for(GWTF) == GWTF


def test_flow_test_scores_against_greedy_and_oracle(small_flow):
    result = run_flow_test(small_flow, seed=2)
    assert result.reached_steady_state
    assert result.gwtf_flows >= 1
    assert result.oracle_flows >= result.gwtf_flows
    assert result.cost_curve[-1][1] == result.gwtf_flows
    assert result.oracle_matched_cost <= result.oracle_cost + 1e-9
    assert result.oracle_ratio is None or result.oracle_ratio >= 1.0 - 1e-9
    assert result.as_dict()["scenario"] == "small-flow"


def test_flow_test_is_deterministic(small_flow):
    first = run_flow_test(small_flow, seed=3, record_trace=True)
    second = run_flow_test(small_flow, seed=3, record_trace=True)
    assert first.trace_hash == second.trace_hash
    assert first.gwtf_cost == second.gwtf_cost


def test_addition_test_scores_every_method(small_addition):
    result = run_addition_test(small_addition, seed=1)
    assert set(result.objectives) == {GWTF, CAPACITY_FIRST, RANDOM, OPTIMAL}
    assert set(result.improvements) == set(result.objectives)
    best = result.objectives[OPTIMAL]
    assert all(best <= value + 1e-9 for value in result.objectives.values())
    assert result.ratio_to_optimal(GWTF) >= 1.0 - 1e-9
    assert all(set(a) == {5, 6} for a in result.assignments.values())


def test_addition_test_without_optimal(small_addition):
    result = run_addition_test(small_addition, seed=1, include_optimal=False)
    assert OPTIMAL not in result.objectives
    assert result.ratio_to_optimal() is None


def test_oracle_comparison():
    config = load_scenario("optimality", seed=0)
    comparison = run_oracle(config)
    assert comparison.oracle_flows >= comparison.gwtf_flows
    assert set(comparison.per_data_node) == {0, 1, 2}
    assert comparison.as_dict()["ratio"] == comparison.ratio
    assert comparison.as_dict()["full_flow"] == (comparison.gwtf_flows == comparison.oracle_flows)


def test_compare_runs_each_routing_on_the_same_seeds():
    config = load_scenario("homogeneous-0", iterations=1)
    results = compare(config, seeds=(0, 1))
    assert set(results) == {GWTF, GREEDY}
    assert [r.config.seed for r in results[GREEDY]] == [0, 1]
    assert all(r.config.recovery == PIPELINE_RESTART for r in results[GREEDY])
    assert mean_metric(results[GWTF], "throughput") == 8


def test_costs_are_compared_at_the_formed_flow_count():
    comparison = OracleComparison("s", 0, gwtf_cost=10.0, gwtf_flows=1, oracle_cost=16.0, oracle_flows=2,
                                  oracle_matched_cost=8.0)
    assert not comparison.full_flow
    assert comparison.ratio == 1.25

    result = FlowTestResult("s", 0, gwtf_cost=10.0, gwtf_flows=1, greedy_cost=12.0, greedy_flows=2,
                            oracle_cost=16.0, oracle_flows=2, steady_round=7, rounds=12,
                            greedy_matched_cost=12.5, oracle_matched_cost=8.0)
    assert result.oracle_ratio == 1.25
    assert result.greedy_reduction == pytest.approx(0.2)


def test_greedy_that_cannot_match_the_flow_count_is_not_compared():
    result = FlowTestResult("s", 0, gwtf_cost=10.0, gwtf_flows=2, greedy_cost=6.0, greedy_flows=1,
                            oracle_cost=9.0, oracle_flows=2, steady_round=7, rounds=12)
    assert result.greedy_matched_cost is None
    assert result.greedy_reduction is None
    assert result.oracle_ratio is None
