import statistics

import pytest

from apps.harness.experiments import CAPACITY_FIRST, OPTIMAL, RANDOM, compare, mean_metric, run_addition_test, run_flow_test
from apps.harness.scenarios import load_scenario
from apps.lifecycle.peer import GREEDY
from apps.recovery.repair import GWTF

pytestmark = pytest.mark.slow

FLOW_SETTINGS = [f"flow-{n}" for n in range(1, 7)]
SINGLE_DATA_NODE = [f"flow-{n}" for n in range(1, 5)]
ADDITION_SETTINGS = [f"addition-{n}" for n in range(1, 6)]
SEEDS = range(10)
MAX_STEADY_ROUND = 120


@pytest.fixture(scope="module")
def flow_results():
    return {name: [run_flow_test(load_scenario(name), seed) for seed in SEEDS] for name in FLOW_SETTINGS}


# ====
# flow formation
# ====

@pytest.mark.parametrize("name", FLOW_SETTINGS)
def test_formed_flows_cost_no_more_than_greedy(flow_results, name):
    pairs = [(r.gwtf_cost, r.greedy_matched_cost) for r in flow_results[name] if r.greedy_matched_cost]
    assert pairs
    assert statistics.fmean(g for g, _ in pairs) <= statistics.fmean(b for _, b in pairs) + 1e-9


def test_one_setting_beats_greedy_by_a_fifth(flow_results):
    reductions = []
    for results in flow_results.values():
        pairs = [(r.gwtf_cost, r.greedy_matched_cost) for r in results if r.greedy_matched_cost]
        if pairs:
            reductions.append(1 - statistics.fmean(g for g, _ in pairs) / statistics.fmean(b for _, b in pairs))
    assert max(reductions) >= 0.2


@pytest.mark.parametrize("name", SINGLE_DATA_NODE)
def test_formed_flows_stay_near_the_oracle(flow_results, name):
    results = flow_results[name]
    assert all(r.full_flow for r in results)
    close = [r for r in results if r.oracle_ratio is not None and r.oracle_ratio <= 1.5]
    assert len(close) >= 0.8 * len(results)


@pytest.mark.parametrize("name", FLOW_SETTINGS)
def test_every_seed_reaches_steady_state_in_time(flow_results, name):
    rounds = [r.steady_round for r in flow_results[name]]
    assert all(r is not None and r <= MAX_STEADY_ROUND for r in rounds)


# ====
# node addition
# ====

@pytest.mark.parametrize("name", ADDITION_SETTINGS)
def test_gwtf_admission_beats_baselines_and_stays_near_optimal(name):
    config = load_scenario(name, stages=4, relays=16, candidates=6)
    results = [run_addition_test(config, seed) for seed in SEEDS]

    mean = {m: statistics.fmean(r.improvement(m) for r in results) for m in (GWTF, CAPACITY_FIRST, RANDOM)}
    assert mean[GWTF] >= mean[CAPACITY_FIRST] - 1e-9
    assert mean[GWTF] >= mean[RANDOM] - 1e-9
    for result in results:
        assert result.objectives[GWTF] <= 1.25 * result.objectives[OPTIMAL] + 1e-9


# ====
# churn
# ====

@pytest.mark.parametrize("name", ["heterogeneous-10", "heterogeneous-20"])
def test_gwtf_tolerates_churn_better_than_pipeline_restarts(name):
    results = compare(load_scenario(name, iterations=10), routings=(GWTF, GREEDY), seeds=range(25))
    assert mean_metric(results[GWTF], "time_per_microbatch") <= mean_metric(results[GREEDY], "time_per_microbatch")
    assert mean_metric(results[GWTF], "wasted_compute_time") < mean_metric(results[GREEDY], "wasted_compute_time")
