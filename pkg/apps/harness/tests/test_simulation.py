import os
import subprocess
import sys

import pytest
from django.conf import settings

from apps.domain.builders import layered_topology
from apps.harness.experiments import run_experiment
from apps.harness.scenarios import ScenarioConfig, load_scenario
from apps.harness.simulation import Simulation
from apps.lifecycle.peer import GREEDY
from apps.recovery.repair import GWTF, PIPELINE_RESTART
from apps.simnet.messages import MessageType


@pytest.fixture
def homogeneous():
    return load_scenario("homogeneous-0", iterations=2)


def test_crash_free_run_completes_every_microbatch(homogeneous):
    result = run_experiment(homogeneous)
    assert not result.failed
    assert [m.throughput for m in result.report.iterations] == [8, 8]
    assert all(m.wasted_compute_time == 0 for m in result.report.iterations)
    assert result.consistency_violations == []


def test_same_seed_gives_identical_trace(homogeneous):
    first = run_experiment(homogeneous, seed=4)
    second = run_experiment(homogeneous, seed=4)
    assert first.trace_hash == second.trace_hash
    assert first.report == second.report


def test_different_seeds_give_different_traces(homogeneous):
    assert run_experiment(homogeneous, seed=1).trace_hash != run_experiment(homogeneous, seed=2).trace_hash


def test_greedy_routing_completes(homogeneous):
    result = run_experiment(homogeneous.replace(routing=GREEDY, recovery=PIPELINE_RESTART))
    assert not result.failed
    assert result.report.total_throughput == 16


def test_throughput_never_exceeds_emitted():
    config = load_scenario("heterogeneous-10", iterations=3, seed=5)
    result = run_experiment(config)
    for metrics in result.report.iterations:
        assert metrics.throughput <= metrics.emitted
        assert metrics.wasted_compute_time >= 0


# ====
# backward repair
# ====

STAGES = 4


def _single_microbatch(recovery):
    config = ScenarioConfig(name="repair", stages=STAGES, relays=STAGES + 1, microbatches=1, iterations=1,
                            recovery=recovery)
    nodes = 1 + STAGES + 1
    topology = layered_topology([[1], [1, 1], [1], [1]], data_capacities=(1,), latency=1.0,
                                compute_costs={n: 1.0 for n in range(nodes)}, full_mesh=True)
    sim = Simulation(config, topology=topology).start()
    sim.engine.run_until(lambda: sim.nodes[0].emitted, sim.time_limit())

    path = sim.formed_paths()[0]
    victim = path[2]
    assert sim.topology.node(victim).stage == 1
    sim.inject_fault(victim, MessageType.GRADIENT)
    return sim.run()


def test_backward_crash_recomputes_one_stage():
    sim = _single_microbatch(GWTF)
    assert sim.counters["crash"] == 1
    assert sim.counters["recomputed_forward"] == 1
    assert sim.report().iterations[0].throughput == 1


def test_pipeline_restart_recomputes_every_stage():
    sim = _single_microbatch(PIPELINE_RESTART)
    assert sim.counters["crash"] == 1
    assert sim.counters["recomputed_forward"] == STAGES


def test_formation_only_reaches_steady_state():
    config = load_scenario("flow-5", seed=1)
    sim = Simulation(config, formation_only=True, record_trace=False).run()
    assert sim.failure is None
    assert sim.steady_round is not None
    flows, cost = sim.formed_cost()
    assert flows >= 1
    assert cost > 0


def test_scheduled_crash_is_counted(homogeneous):
    sim = Simulation(homogeneous.replace(iterations=1))
    relay = sim.topology.relays()[0].id
    sim.crash_at(relay, 0.5)
    sim.run()
    assert sim.counters["crash"] == 1
    assert not sim.topology.node(relay).alive
    assert relay not in sim.nodes


# ====
# churn and determinism
# ====

@pytest.mark.parametrize("seed", range(3))
def test_churn_never_loses_a_microbatch(seed):
    config = load_scenario("heterogeneous-20", iterations=4, seed=seed)
    sim = Simulation(config, record_trace=False).run()
    assert sim.failure is None
    data_nodes = [d.id for d in sim.topology.data_nodes()]
    assert sim.closed
    for iteration in sim.closed:
        resolved = [r for r in sim.resolved if r.iteration == iteration]
        assert len({r.microbatch for r in resolved}) == len(resolved)
        for origin in data_nodes:
            assert sum(1 for r in resolved if r.origin == origin) == config.microbatches


def test_trace_hash_survives_a_process_restart(tmp_path):
    expected = Simulation(load_scenario("homogeneous-0", iterations=1, seed=2)).run().trace_hash()
    env = {**os.environ, "PYTHONHASHSEED": "1234"}
    completed = subprocess.run(
        [sys.executable, "manage.py", "trace", "homogeneous-0", "--iterations", "1", "--seed", "2",
         "--out", str(tmp_path)],
        cwd=settings.BASE_DIR, env=env, capture_output=True, text=True, check=True,
    )
    assert completed.stdout.strip().splitlines()[-1] == expected
