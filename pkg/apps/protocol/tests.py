import math
from collections import deque

import numpy as np
import pytest

from apps.cost.cost_model import pair_cost
from apps.domain.builders import layered_topology, random_layered_topology
from apps.domain.validation import SAME, stage_neighbors
from apps.protocol.agent import FlowAgent, ProtocolConfig
from apps.protocol.annealing import AnnealerState, annealing_accept
from apps.protocol.exceptions import CapacityExhausted
from apps.protocol.ledger import SINK, CostTable, FlowLedger, FlowRecord
from apps.protocol.operations import (
    Approve,
    ChangeRequest,
    EdgeView,
    Reject,
    Segment,
    evaluate_change,
    evaluate_redirect,
    handle_request_change,
    handle_request_flow,
    on_flow_approved,
    select_flow_target,
    steady_state,
)
from apps.simnet.messages import Message, MessageType


def _outflow(ledger, flow_id, sink, cost, downstream=9, downstream_flow=90):
    return ledger.add(FlowRecord(flow_id, sink, cost, downstream=downstream, downstream_flow=downstream_flow))


# ============================================================
# LEDGER
# ============================================================

def test_unpaired_outflow_consumes_capacity():
    ledger = FlowLedger(1, capacity=2)
    _outflow(ledger, 10, sink=0, cost=5)
    assert ledger.capacity_remaining == 1
    assert [r.flow_id for r in ledger.unpaired_outflow] == [10]
    assert not ledger.is_stable


def test_ledger_refuses_outflow_beyond_capacity():
    ledger = FlowLedger(1, capacity=1)
    _outflow(ledger, 10, sink=0, cost=5)
    with pytest.raises(CapacityExhausted):
        _outflow(ledger, 11, sink=0, cost=5)


def test_cost_table_treats_infinite_as_absent():
    table = CostTable(1)
    table.update(2, 0, 4.0)
    table.update(2, 0, math.inf)
    assert table.entries(2) == {}
    with pytest.raises(ValueError):
        table.update(2, 0, -1.0)


# ============================================================
# REQUEST FLOW
# ============================================================

def test_select_prefers_lowest_total():
    table = CostTable(1)
    table.update(2, 0, 4.0)
    table.update(3, 0, 2.0)
    target = select_flow_target(FlowLedger(1, 1), table, {2: 3.0, 3: 6.0})
    assert (target.peer, target.sink, target.expected_cost) == (2, 0, 4.0)


def test_select_without_advertisers():
    assert select_flow_target(FlowLedger(1, 1), CostTable(1), {2: 3.0}) is None


def test_select_restricted_to_inflow_sink():
    ledger = FlowLedger(1, 2)
    ledger.add(FlowRecord(10, sink=6, cost_to_sink=0.0, upstream=5, upstream_flow=50))
    table = CostTable(1)
    table.update(2, 4, 1.0)
    assert select_flow_target(ledger, table, {2: 1.0}) is None


def test_select_skips_blocked_sinks_only_for_spare_capacity():
    table = CostTable(1)
    table.update(2, 0, 1.0)
    assert select_flow_target(FlowLedger(1, 1), table, {2: 1.0}, blocked_sinks={0}) is None


def test_request_flow_exact_match_is_approved():
    ledger = FlowLedger(1, 1)
    _outflow(ledger, 10, sink=0, cost=5.0)
    result = handle_request_flow(ledger, requester=7, requester_flow=70, sink=0, expected_cost=5.0)
    assert result == Approve(10, 0, 5.0)
    assert ledger.get(10).upstream == 7
    assert ledger.unpaired_outflow == []


def test_request_flow_stale_cost_is_rejected_with_current():
    ledger = FlowLedger(1, 1)
    _outflow(ledger, 10, sink=0, cost=6.0)
    assert handle_request_flow(ledger, 7, 70, 0, 5.0) == Reject(0, 6.0)


def test_request_flow_without_outflow_reports_infinity():
    assert handle_request_flow(FlowLedger(1, 1), 7, 70, 0, 5.0) == Reject(0, math.inf)


def test_on_flow_approved_sums_edge_and_cost():
    ledger = FlowLedger(1, 1)
    record, advertised = on_flow_approved(ledger, 2, Approve(20, 0, 4.0), edge_cost=3.0, new_flow_id=11)
    assert record.cost_to_sink == 7.0
    assert advertised == 7.0
    assert ledger.capacity_remaining == 0
    with pytest.raises(CapacityExhausted):
        on_flow_approved(ledger, 2, Approve(21, 0, 4.0), edge_cost=3.0, new_flow_id=12)


def test_on_flow_approved_pairs_existing_inflow():
    ledger = FlowLedger(1, 2)
    ledger.add(FlowRecord(10, sink=0, cost_to_sink=0.0, upstream=5, upstream_flow=50))
    record, _ = on_flow_approved(ledger, 2, Approve(20, 0, 4.0), 3.0, new_flow_id=11, merge_flow=10)
    assert record.flow_id == 10
    assert record.is_paired
    assert ledger.unpaired_inflow == [] and ledger.unpaired_outflow == []


# ============================================================
# CHANGE / REDIRECT / ANNEALING
# ============================================================

def _edges(d_mine, d_other):
    return EdgeView(1, 10, 2, 20, 0, d_mine), EdgeView(3, 30, 4, 40, 0, d_other)


def test_change_proposed_when_max_drops():
    mine, other = _edges(3, 8)
    proposal = evaluate_change(mine, other, 6, 6, AnnealerState(), u=0.99)
    assert proposal.cost_current == 8 and proposal.cost_new == 6


@pytest.mark.parametrize("u, proposed", [(0.30, True), (0.31, False)])
def test_change_uphill_acceptance(u, proposed):
    mine, other = _edges(5, 5)
    proposal = evaluate_change(mine, other, 7, 7, AnnealerState(t0=1.7), u=u)
    assert (proposal is not None) == proposed


def _responder(record_cost=8.0):
    ledger = FlowLedger(3, 1)
    ledger.add(FlowRecord(30, 0, record_cost, upstream=5, upstream_flow=50, downstream=4, downstream_flow=40))
    return ledger


def _change_request(cross_cost):
    return ChangeRequest(proposer_edge=3.0, proposer_downstream=2, proposer_downstream_flow=20,
                         proposer_downstream_cost=0.0, cross_cost=cross_cost, flow_id=30,
                         downstream=4, downstream_flow=40, sink=0)


def test_request_change_accepted_on_improvement():
    ledger = _responder()
    costs = {4: 8.0, 2: 6.0}
    record = handle_request_change(ledger, _change_request(6.0), costs.get)
    assert (record.downstream, record.downstream_flow, record.cost_to_sink) == (2, 20, 6.0)


def test_request_change_declined_for_unknown_flow():
    assert handle_request_change(FlowLedger(3, 1), _change_request(6.0), {4: 8.0, 2: 6.0}.get) is None


def test_request_change_declined_without_strict_gain():
    ledger = _responder(record_cost=6.0)
    assert handle_request_change(ledger, _change_request(6.0), {4: 6.0, 2: 6.0}.get) is None


def test_responder_scores_the_swap_on_edge_costs_like_the_proposer():
    mine, other = EdgeView(1, 10, 2, 20, 0, 3.0, 10.0), EdgeView(3, 30, 4, 40, 0, 8.0, 0.0)
    proposal = evaluate_change(mine, other, 6.0, 6.0, AnnealerState(), u=0.99)
    assert (proposal.cost_current, proposal.cost_new) == (8.0, 6.0)

    request = ChangeRequest(proposer_edge=3.0, proposer_downstream=2, proposer_downstream_flow=20,
                            proposer_downstream_cost=10.0, cross_cost=6.0, flow_id=30,
                            downstream=4, downstream_flow=40, sink=0, proposed_cost=proposal.cost_new)
    record = handle_request_change(_responder(), request, {4: 8.0, 2: 6.0}.get)
    assert (record.downstream, record.cost_to_sink) == (2, 16.0)


def _uphill_request(proposed_cost):
    return ChangeRequest(proposer_edge=5.0, proposer_downstream=2, proposer_downstream_flow=20,
                         proposer_downstream_cost=0.0, cross_cost=7.0, flow_id=30,
                         downstream=4, downstream_flow=40, sink=0, proposed_cost=proposed_cost)


def test_responder_follows_an_annealed_swap_it_agrees_with():
    record = handle_request_change(_responder(record_cost=5.0), _uphill_request(7.0), {4: 5.0, 2: 7.0}.get)
    assert (record.downstream, record.cost_to_sink) == (2, 7.0)


def test_responder_declines_an_uphill_swap_it_scores_differently():
    assert handle_request_change(_responder(record_cost=5.0), _uphill_request(6.0), {4: 5.0, 2: 7.0}.get) is None


def _segment(ab, bc):
    return Segment(a=1, a_flow=10, b=2, b_flow=20, c=3, c_flow=30, sink=0, cost_ab=ab, cost_bc=bc)


def test_redirect_proposed_when_cheaper():
    proposal = evaluate_redirect(_segment(5, 6), 4, 5, capacity_remaining=1, annealer=AnnealerState(), u=0.99)
    assert proposal.gain == 2


def test_redirect_equal_cost_not_proposed():
    assert evaluate_redirect(_segment(5, 6), 5, 6, 1, AnnealerState(), u=0.0) is None


def test_redirect_uphill_accepted_by_annealing():
    assert evaluate_redirect(_segment(5, 6), 6, 6, 1, AnnealerState(t0=1.7), u=0.5) is not None


def test_redirect_needs_spare_capacity():
    assert evaluate_redirect(_segment(5, 6), 1, 1, 0, AnnealerState(), u=0.0) is None


def test_annealing_accept_boundaries():
    assert annealing_accept(7, 5, 1.7, 0.999)
    assert annealing_accept(5, 5, 1.7, 0.999)
    assert not annealing_accept(5, 7, 1.7, 0.31)


def test_cooling_is_geometric_and_resets():
    annealer = AnnealerState(t0=1.7, alpha=0.95)
    for _ in range(7):
        annealer.cool()
    assert annealer.temperature == pytest.approx(1.7 * 0.95 ** 7)
    annealer.reset()
    assert annealer.temperature == 1.7


def test_annealing_sequence_is_reproducible():
    def decisions(seed):
        rng = np.random.default_rng(seed)
        return [annealing_accept(5, 6, 1.7, rng.random()) for _ in range(50)]

    assert decisions(3) == decisions(3)


@pytest.mark.parametrize("history, current, expected", [
    ([[4]], 10, True),
    ([[8]], 10, False),
    ([[]], 5, True),
    ([[]], 3, False),
])
def test_steady_state(history, current, expected):
    assert steady_state(history, current, window=5) is expected


# ============================================================
# AGENTS OVER A LOOPBACK NETWORK
# ============================================================

class LoopbackWorld:
    """Delivers every message of a round before the next round starts"""

    def __init__(self, topology, config=ProtocolConfig(), seed=0):
        self.topology = topology
        self.queue = deque()
        self.agents = {
            spec.id: FlowAgent(spec.id, spec.stage, spec.capacity, spec.is_data, self, config,
                               rng=np.random.default_rng([seed, spec.id]))
            for spec in topology.nodes
        }

    def send(self, src, mtype, dst, payload):
        self.queue.append(Message(mtype, src, dst, payload))

    def edge_cost(self, a, b):
        return pair_cost(self.topology, a, b)

    def peers(self, node, direction):
        if direction == SAME:
            spec = self.topology.node(node)
            if spec.is_data:
                return []
            return [r.id for r in self.topology.relays(spec.stage) if r.id != node]
        return sorted(stage_neighbors(self.topology, node, direction))

    def play_round(self, r):
        for node in sorted(self.agents):
            self.agents[node].on_round(r)
        while self.queue:
            message = self.queue.popleft()
            self.agents[message.dst].handle(message)

    def run(self, rounds):
        for r in range(rounds):
            self.play_round(r)
        return rounds - 1

    def run_until_steady(self, window, limit):
        for r in range(limit):
            self.play_round(r)
            if steady_state([a.change_rounds for a in self.agents.values()], r, window):
                return r
        return None


def _assert_bijective(world):
    for node, agent in world.agents.items():
        for record in agent.ledger.records.values():
            if record.upstream is not None:
                up = world.agents[record.upstream].ledger.get(record.upstream_flow)
                assert up is not None and up.downstream == node and up.downstream_flow == record.flow_id
            if record.downstream is not None:
                down = world.agents[record.downstream].ledger.get(record.downstream_flow)
                assert down is not None and down.upstream == node and down.upstream_flow == record.flow_id


def _chain_cost(world, node, record):
    total = 0.0
    while record.downstream is not None:
        total += world.edge_cost(node, record.downstream)
        node, record = record.downstream, world.agents[record.downstream].ledger.get(record.downstream_flow)
    return total


def test_single_chain_forms():
    world = LoopbackWorld(layered_topology([[1], [1]], data_capacities=(1,)))
    last = world.run(12)
    data = world.agents[0].ledger
    assert len(data.sources) == 1
    assert data.sources[0].cost_to_sink == pytest.approx(3.0)
    _assert_bijective(world)
    assert steady_state([a.change_rounds for a in world.agents.values()], last, 5)


def test_uniform_pipeline_fills_data_capacity():
    topology = layered_topology([[1, 1], [1, 1], [1, 1]], data_capacities=(2,))
    world = LoopbackWorld(topology)
    world.run(40)
    assert len(world.agents[0].ledger.sources) == 2
    _assert_bijective(world)
    for spec in topology.relays():
        ledger = world.agents[spec.id].ledger
        assert ledger.unpaired_inflow == [] and ledger.unpaired_outflow == []


@pytest.mark.parametrize("seed", range(100))
def test_formed_costs_match_chains(seed):
    topology = random_layered_topology(np.random.default_rng(seed))
    world = LoopbackWorld(topology, seed=seed)
    world.run(60)
    _assert_bijective(world)
    for node, agent in world.agents.items():
        for record in agent.ledger.paired:
            if record.downstream is not None:
                assert record.cost_to_sink == pytest.approx(_chain_cost(world, node, record), abs=1e-6)
        assert agent.ledger.capacity_remaining >= 0


def _chain_end(world, node, record):
    hops = 0
    while record.downstream is not None:
        assert world.agents[record.downstream].ledger.get(record.downstream_flow).sink == record.sink
        node, record = record.downstream, world.agents[record.downstream].ledger.get(record.downstream_flow)
        hops += 1
    return node, record, hops


@pytest.mark.parametrize("seed", range(100))
def test_steady_state_conserves_flow(seed):
    topology = random_layered_topology(np.random.default_rng(seed))
    world = LoopbackWorld(topology, seed=seed)
    assert world.run_until_steady(window=5, limit=300) is not None

    for spec in topology.relays():
        ledger = world.agents[spec.id].ledger
        assert ledger.unpaired_inflow == []
        carried = [r for r in ledger.records.values() if r.upstream is not None]
        assert all(r.downstream is not None for r in carried)

    data = world.agents[0].ledger
    returned = [r for r in data.records.values() if r.kind == SINK and r.upstream is not None]
    sources = [r for r in data.sources if r.downstream is not None]
    assert len(sources) == len(returned)
    for record in sources:
        end, last, hops = _chain_end(world, 0, record)
        assert (end, last.kind, last.sink) == (0, SINK, 0)
        assert hops == topology.num_stages + 1


def test_agent_forgets_expired_bookkeeping():
    world = LoopbackWorld(layered_topology([[1], [1]], data_capacities=(1,)))
    agent = world.agents[1]
    agent.handle(Message(MessageType.CANCEL_FLOW, 2, 1, {"flow": 999}))
    agent.demand[7] = 3
    agent.probed[(5, 7)] = 0
    assert 999 in agent.cancelled

    agent.on_round(2)
    assert 999 not in agent.cancelled
    assert 7 in agent.demand and (5, 7) in agent.probed

    agent.on_round(4)
    assert 7 not in agent.demand
    assert (5, 7) not in agent.probed
