import math
import random

import pytest

from apps.cost.cost_model import (
    CostMatrix,
    edge_cost,
    minimax_cost,
    pair_cost,
    path_cost,
    sum_cost,
)
from apps.cost.exceptions import MissingEdgeCost
from apps.domain.builders import layered_topology
from apps.domain.exceptions import MissingLink
from apps.domain.types import LinkSpec, NodeRole, NodeSpec


def _spec(node_id, compute):
    return NodeSpec(node_id, NodeRole.RELAY, 0, 1, compute)


def test_edge_cost_matches_formula():
    i, j = _spec(1, 2), _spec(2, 4)
    cost = edge_cost(i, j, LinkSpec(1, 2, 1, 10), LinkSpec(2, 1, 3, 10), 100)
    assert cost == pytest.approx(15.0)


def test_edge_cost_zero_case():
    i, j = _spec(1, 0), _spec(2, 0)
    assert edge_cost(i, j, LinkSpec(1, 2, 0, 7), LinkSpec(2, 1, 0, 3), 0) == 0.0


def test_edge_cost_symmetric_and_linear_in_size():
    rng = random.Random(11)
    for _ in range(200):
        i, j = _spec(1, rng.uniform(0, 10)), _spec(2, rng.uniform(0, 10))
        ij = LinkSpec(1, 2, rng.uniform(0, 20), rng.uniform(0.5, 50))
        ji = LinkSpec(2, 1, rng.uniform(0, 20), rng.uniform(0.5, 50))
        size = rng.uniform(0, 100)
        forward = edge_cost(i, j, ij, ji, size)
        assert forward == pytest.approx(edge_cost(j, i, ji, ij, size))
        slope = 2 / (ij.bandwidth + ji.bandwidth)
        assert edge_cost(i, j, ij, ji, size + 1) - forward == pytest.approx(slope)


def test_sum_and_minimax_cost():
    costs = {("a", "b"): 5, ("b", "c"): 9}
    assert sum_cost({}, costs) == 0
    assert minimax_cost({}, costs) == 0
    assert sum_cost({("a", "b"): 2}, costs) == 10
    assert sum_cost({("a", "b"): 1, ("b", "c"): 1}, {("a", "b"): 3, ("b", "c"): 4}) == 7
    assert minimax_cost({("a", "b"): 2, ("b", "c"): 1}, costs) == 10
    flat = {("a", "b"): 3, ("b", "c"): 8, ("c", "d"): 6}
    assert minimax_cost({edge: 1 for edge in flat}, flat) == 8


def test_missing_edge_cost():
    with pytest.raises(MissingEdgeCost):
        sum_cost({("a", "z"): 1}, {})


def test_sum_cost_monotone_in_flow():
    costs = {("a", "b"): 2.5, ("b", "c"): 1.0}
    base = {("a", "b"): 1, ("b", "c"): 1}
    bumped = {("a", "b"): 2, ("b", "c"): 1}
    assert sum_cost(bumped, costs) >= sum_cost(base, costs)
    assert minimax_cost(bumped, costs) >= minimax_cost(base, costs)


def test_path_cost_over_topology():
    latencies = {(0, 1): 3, (1, 2): 8, (0, 2): 100}
    t = layered_topology([[1], [1]], latency=latencies)
    assert path_cost([1], t) == 0
    assert path_cost([0, 1, 2], t) == pytest.approx(11)


def test_path_cost_missing_link():
    t = layered_topology([[1], [1], [1]])
    with pytest.raises(MissingLink):
        path_cost([0, 2], t)


def test_cost_matrix_and_pair_cost():
    t = layered_topology([[1], [1]], latency=4)
    matrix = CostMatrix(t)
    assert matrix[(0, 1)] == pytest.approx(4)
    assert math.isinf(pair_cost(t, 0, 2))
    assert math.isinf(matrix.get_cost(0, 2))
    with pytest.raises(KeyError):
        matrix[(0, 2)]
