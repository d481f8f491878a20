import numpy as np
import pytest
from rest_framework.exceptions import ValidationError

from apps.domain.validation import validate_topology
from apps.harness.exceptions import ScenarioNotFound
from apps.harness.scenarios import (
    ADDITION,
    FLOW,
    Distribution,
    ScenarioConfig,
    build_candidates,
    build_topology,
    draw_link_costs,
    list_scenarios,
    load_scenario,
    stage_sizes,
)
from apps.harness.serializers import ScenarioConfigSerializer


# ====
# distributions
# ====

@pytest.mark.parametrize("low, high", [(1, 3), (1, 20), (5, 100), (50, 500)])
def test_draws_stay_within_declared_bounds(low, high):
    rng = np.random.default_rng(0)
    dist = Distribution(low, high)
    draws = np.array([dist.draw(rng) for _ in range(10_000)])
    assert draws.min() >= low
    assert draws.max() < high
    assert np.all(draws == np.floor(draws))


def test_constant_distribution():
    rng = np.random.default_rng(0)
    assert {Distribution.constant(4).draw(rng) for _ in range(50)} == {4.0}


def test_phi_offsets_intralayer_costs_by_largest_interlayer_cost():
    config = ScenarioConfig(name="t", stages=2, relays=4, interlayer=Distribution(1, 20),
                            intralayer=Distribution(50, 100, phi=True))
    topology = build_topology(config, np.random.default_rng(3))
    costs = draw_link_costs(config, list(topology.nodes), np.random.default_rng(3))
    relays = [n for n in topology.nodes if not n.is_data]

    for a in relays:
        for b in relays:
            if a.id < b.id and a.stage == b.stage:
                assert costs[(a.id, b.id)] >= 50
    assert all(costs[(a, b)] < 20 for a, b in costs if costs[(a, b)] < 50)


# ====
# topology generation
# ====

def test_even_stage_sizes():
    config = ScenarioConfig(name="t", stages=3, relays=8)
    assert stage_sizes(config, np.random.default_rng(0)) == [3, 3, 2]


def test_random_stage_sizes_keep_every_stage_populated():
    config = ScenarioConfig(name="t", stages=4, relays=16, random_stage_sizes=True)
    for seed in range(20):
        sizes = stage_sizes(config, np.random.default_rng(seed))
        assert sum(sizes) == 16
        assert min(sizes) >= 1


def test_explicit_stage_sizes_win():
    config = ScenarioConfig(name="t", stages=2, relays=5, relays_per_stage=(1, 4))
    assert stage_sizes(config, np.random.default_rng(0)) == [1, 4]


def test_build_topology_is_seeded():
    config = ScenarioConfig(name="t", stages=3, relays=9, capacity=Distribution(1, 5), interlayer=Distribution(1, 20))
    a = build_topology(config, np.random.default_rng(7))
    b = build_topology(config, np.random.default_rng(7))
    assert a.nodes == b.nodes
    assert {k: v.latency for k, v in a.links.items()} == {k: v.latency for k, v in b.links.items()}


def test_build_topology_shapes_nodes():
    config = ScenarioConfig(name="t", stages=3, relays=9, data_nodes=2, microbatches=4,
                            capacity=Distribution(1, 3))
    topology = validate_topology(build_topology(config, np.random.default_rng(0)))
    assert len(topology.data_nodes()) == 2
    assert all(d.capacity == 4 for d in topology.data_nodes())
    assert len(topology.relays()) == 9
    assert all(1 <= r.capacity <= 2 for r in topology.relays())


def test_candidates_link_to_every_node():
    config = ScenarioConfig(name="t", stages=2, relays=4, candidates=3)
    topology = build_topology(config, np.random.default_rng(0))
    candidates, links = build_candidates(config, topology, np.random.default_rng(1))
    assert [c.id for c in candidates] == [5, 6, 7]
    assert all(c.stage is None for c in candidates)
    pairs = {(l.src, l.dst) for l in links}
    for c in candidates:
        assert all((c.id, n) in pairs and (n, c.id) in pairs for n in topology.node_ids)
    assert (5, 7) in pairs and (7, 5) in pairs


# ====
# scenario files
# ====

def test_every_canned_scenario_loads():
    names = list_scenarios()
    assert {"flow-1", "flow-6", "addition-5", "homogeneous-0", "heterogeneous-20", "optimality"} <= set(names)
    for name in names:
        config = load_scenario(name)
        assert config.name == name


def test_loaded_scenario_matches_file():
    config = load_scenario("flow-1")
    assert config.kind == FLOW
    assert (config.stages, config.relays, config.microbatches) == (8, 40, 8)
    assert config.capacity == Distribution(1, 3)

    addition = load_scenario("addition-1")
    assert addition.kind == ADDITION
    assert addition.intralayer == Distribution(50, 100, phi=True)


def test_overrides_apply():
    config = load_scenario("homogeneous-0", seed=11, iterations=2, churn=None)
    assert config.seed == 11
    assert config.iterations == 2
    assert config.churn == 0.0


def test_missing_scenario():
    with pytest.raises(ScenarioNotFound):
        load_scenario("no-such-scenario")


# ====
# validation
# ====

def _validate(**data):
    serializer = ScenarioConfigSerializer(data={"name": "t", "stages": 2, "relays": 4, **data})
    serializer.is_valid(raise_exception=True)
    return serializer.save()


def test_distribution_forms():
    config = _validate(capacity=4, interlayer=[1, 20], intralayer={"low": 50, "high": 100, "phi": True})
    assert config.capacity == Distribution.constant(4)
    assert config.interlayer == Distribution(1, 20)
    assert config.intralayer.phi


@pytest.mark.parametrize("data", [
    {"capacity": [5, 1]},
    {"capacity": 0},
    {"bandwidth": 0},
    {"interlayer": {"low": 1, "high": 2, "phi": True}},
    {"relays": 1},
    {"relays_per_stage": [1, 2]},
    {"routing": "swarm"},
    {"k": 1},
    {"churn": 1.5},
])
def test_invalid_scenarios_are_rejected(data):
    with pytest.raises(ValidationError):
        _validate(**data)


def test_defaults_come_from_settings(settings):
    settings.GWTF = {**settings.GWTF, "T0": 2.5}
    assert _validate().t0 == 2.5
