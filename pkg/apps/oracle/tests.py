import itertools
import math

import numpy as np
import pytest

from apps.cost.cost_model import CostMatrix, sum_cost
from apps.domain.builders import layered_topology, random_layered_topology
from apps.domain.types import LinkSpec, NodeRole, NodeSpec
from apps.oracle.addition import (
    addition_objective,
    capacity_first_assignment,
    optimal_addition,
    place_candidates,
    random_assignment,
)
from apps.oracle.exceptions import InstanceTooLarge, NoAvailableSuccessor
from apps.oracle.flow_graph import (
    build_flow_graph,
    exhaustive_min_cost_flow,
    min_cost_max_flow,
    solve_topology,
)
from apps.oracle.greedy import greedy_assignment, greedy_route


def test_two_relays_single_stage():
    t = layered_topology([[1, 1]], data_capacities=[2], latency={(0, 1): 2, (0, 2): 3})
    assignment, cost = min_cost_max_flow(build_flow_graph(t, 0))
    assert cost == pytest.approx(10)
    assert assignment == {(0, 1): 1, (1, 0): 1, (0, 2): 1, (2, 0): 1}


def test_zero_capacity_relays_give_zero_flow():
    t = layered_topology([[0, 0]], data_capacities=[3])
    assignment, cost = min_cost_max_flow(build_flow_graph(t, 0))
    assert assignment == {}
    assert cost == 0


def test_single_relay_is_bottleneck():
    t = layered_topology([[1]], data_capacities=[3])
    solution = solve_topology(t)
    assert solution.flow == 1


def test_oracle_conserves_flow_at_relays():
    rng = np.random.default_rng(3)
    t = layered_topology(
        [[2, 1, 3], [1, 2], [3, 1]],
        data_capacities=[4],
        latency=lambda a, b: int(rng.integers(1, 21)),
    )
    solution = solve_topology(t)
    for relay in t.relays():
        inflow = sum(u for (src, dst), u in solution.assignment.items() if dst == relay.id)
        outflow = sum(u for (src, dst), u in solution.assignment.items() if src == relay.id)
        assert inflow == outflow <= relay.capacity


@pytest.mark.parametrize("seed", range(200))
def test_oracle_matches_exhaustive_enumeration(seed):
    t = random_layered_topology(np.random.default_rng(seed))
    solution = solve_topology(t)
    flow, cost = exhaustive_min_cost_flow(t, 0)
    assert solution.flow == flow
    assert solution.total_cost == pytest.approx(cost)


def test_exhaustive_rejects_large_instances():
    t = layered_topology([[1] * 9])
    with pytest.raises(InstanceTooLarge):
        exhaustive_min_cost_flow(t, 0)


def test_oracle_never_worse_than_greedy():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        t = layered_topology(
            [[int(rng.integers(1, 4)) for _ in range(5)] for _ in range(4)],
            data_capacities=[100],
            latency=lambda a, b: int(rng.integers(1, 21)),
        )
        solution = solve_topology(t)
        greedy, greedy_cost = greedy_assignment(t)
        greedy_flow = sum(u for (src, _), u in greedy.items() if src == 0)
        assert greedy_flow == solution.flow
        assert solution.total_cost <= greedy_cost + 1e-9


def test_multi_source_decomposition_returns_to_origin():
    t = layered_topology([[2, 2], [2, 2]], data_capacities=[2, 2], latency=5)
    solution = solve_topology(t)
    assert solution.per_data_node == {0: 2, 1: 2}
    assert solution.total_cost == pytest.approx(sum_cost(solution.assignment, CostMatrix(t)))


def test_greedy_route_picks_cheapest():
    t = layered_topology([[1], [1, 1, 1]], latency={(1, 2): 7, (1, 3): 3, (1, 4): 5})
    assert greedy_route(t, 1) == 3


def test_greedy_route_tie_goes_to_lowest_id():
    t = layered_topology([[1], [1, 1]], latency={(1, 2): 3, (1, 3): 3})
    assert greedy_route(t, 1) == 2


def test_greedy_route_all_full():
    t = layered_topology([[1], [1, 1]])
    with pytest.raises(NoAvailableSuccessor):
        greedy_route(t, 1, load={2: 1, 3: 1})


def _candidates(base, capacities):
    start = max(base.node_ids) + 1
    candidates = [NodeSpec(start + i, NodeRole.RELAY, None, cap) for i, cap in enumerate(capacities)]
    links = []
    for c in candidates:
        for other in base.node_ids + [x.id for x in candidates]:
            if other != c.id:
                latency = 1 + (c.id * 7 + other * 3) % 11
                links.append(LinkSpec(c.id, other, latency, 1.0))
                links.append(LinkSpec(other, c.id, latency, 1.0))
    return candidates, links


def test_optimal_addition_without_candidates():
    t = layered_topology([[1], [1]], data_capacities=[4])
    result = optimal_addition(t, [])
    assert result.assignment == {}
    assert result.objective == pytest.approx(addition_objective(t))


def test_optimal_addition_one_candidate_two_stages():
    t = layered_topology([[1], [2]], data_capacities=[4], latency=2)
    candidates, links = _candidates(t, [2])
    result = optimal_addition(t, candidates, links)
    assert result.evaluated == 2
    assert result.assignment == {candidates[0].id: 0}


def test_optimal_addition_matches_reenumeration():
    t = layered_topology([[1, 2], [1], [2]], data_capacities=[6], latency=lambda a, b: 1 + (a + b) % 5)
    candidates, links = _candidates(t, [3, 1, 2])
    result = optimal_addition(t, candidates, links)
    assert result.evaluated == 6

    scores = []
    for stages in itertools.permutations(range(3)):
        placement = {c.id: s for c, s in zip(candidates, stages)}
        scores.append(addition_objective(place_candidates(t, candidates, placement, links)))
    assert result.objective == pytest.approx(min(scores))


def test_optimal_addition_permutation_cap():
    t = layered_topology([[1], [1], [1]], data_capacities=[4])
    candidates, links = _candidates(t, [1, 1, 1])
    with pytest.raises(InstanceTooLarge):
        optimal_addition(t, candidates, links, max_permutations=5)


def test_capacity_first_baseline_orders_by_capacity():
    candidates = [NodeSpec(10, NodeRole.RELAY, None, 2), NodeSpec(11, NodeRole.RELAY, None, 5)]
    assert capacity_first_assignment(candidates, 2) == {11: 0, 10: 1}


def test_baselines_defer_candidates_beyond_one_per_stage():
    candidates = [NodeSpec(10, NodeRole.RELAY, None, 2), NodeSpec(11, NodeRole.RELAY, None, 5),
                  NodeSpec(12, NodeRole.RELAY, None, 1)]
    assert capacity_first_assignment(candidates, 2) == {11: 0, 10: 1}
    placed = random_assignment(candidates, 2, np.random.default_rng(0))
    assert set(placed) == {10, 11}
    assert all(0 <= stage < 2 for stage in placed.values())


def test_addition_objective_without_flow_is_infinite():
    t = layered_topology([[0]], data_capacities=[2])
    assert math.isinf(addition_objective(t))


def test_supply_caps_flow_per_data_node():
    t = layered_topology([[1, 1], [1, 1]], data_capacities=(2,), latency=lambda a, b: a + b)
    full = solve_topology(t)
    capped = solve_topology(t, {0: 1})
    assert (full.flow, capped.flow) == (2, 1)
    assert 0 < capped.total_cost < full.total_cost

    greedy, _ = greedy_assignment(t, {0: 1})
    assert sum(units for (src, _), units in greedy.items() if src == 0) == 1
