from collections import Counter

import numpy as np
import pytest

from apps.domain.types import NodeRole, NodeSpec
from apps.lifecycle.data_node import DataPeer, microbatch_id, microbatch_iteration
from apps.lifecycle.exceptions import NotInPhase
from apps.lifecycle.params import Phase, StageParams, aggregate, pseudo_gradient
from apps.lifecycle.peer import GREEDY, PeerNode, RuntimeConfig
from apps.simnet.messages import Message, MessageType

CONFIG = RuntimeConfig(routing=GREEDY)


class FakeWorld:
    """Records everything a node asks of its world"""

    def __init__(self, members=None, num_stages=2):
        self.now = 0.0
        self.round_interval = 1.0
        self.jitter = 0.0
        self.num_stages = num_stages
        self.activation_size = 0.0
        self.aggregation_timeout = 2.0
        self.members = members or {}
        self.counters = Counter()
        self.sent = []
        self.timers = []
        self.computes = []
        self.aggregated = []

    def send(self, src, mtype, dst, payload, size=0.0):
        self.sent.append(Message(mtype, src, dst, dict(payload), size))

    def timer(self, node, delay, name, **data):
        self.timers.append((node, name, data))

    def compute(self, node, duration, name, mb, attempt):
        self.computes.append((node, name, mb, attempt))

    def edge_cost(self, a, b):
        return 1.0

    def peers(self, node, direction):
        return list(self.members.get(direction, []))

    def stage_members(self, stage, iteration=None):
        return list(self.members.get(stage, []))

    def record_work(self, *args):
        pass

    def on_aggregated(self, node, iteration, params):
        self.aggregated.append((node, iteration, params.vector.copy()))

    def of_type(self, mtype):
        return [m for m in self.sent if m.type == mtype]


def relay(node_id, stage=1, capacity=1, world=None, **kwargs):
    spec = NodeSpec(node_id, NodeRole.RELAY, stage, capacity, 1.0)
    return PeerNode(spec, world or FakeWorld(), CONFIG, **kwargs)


def activation(src, dst, mb, iteration=0, attempt=0):
    payload = {"mb": mb, "origin": 0, "iteration": iteration, "attempt": attempt, "flow": None, "path": [0]}
    return Message(MessageType.ACTIVATION, src, dst, payload)


# ====
# params
# ====

def test_aggregate_is_mean_of_shares():
    params = np.zeros(2)
    shares = {2: np.array([1.0, 3.0]), 1: np.array([3.0, 1.0])}
    assert np.array_equal(aggregate(params, shares, eta=0.5), np.array([-1.0, -1.0]))


def test_aggregate_without_shares_keeps_params():
    params = np.ones(3)
    assert np.array_equal(aggregate(params, {}), params)


def test_pseudo_gradient_is_deterministic():
    assert np.array_equal(pseudo_gradient(7, 2, 11), pseudo_gradient(7, 2, 11))
    assert not np.array_equal(pseudo_gradient(7, 2, 11), pseudo_gradient(7, 2, 12))


def test_redone_microbatch_counts_once():
    params = StageParams(1, seed=3)
    params.accumulate(5)
    params.accumulate(5)
    assert np.array_equal(params.accumulator, pseudo_gradient(3, 1, 5))


def test_replicas_start_identical():
    assert StageParams(2, seed=9).digest() == StageParams(2, seed=9).digest()


def test_microbatch_ids_encode_iteration():
    mb = microbatch_id(3, origin=1, index=2)
    assert microbatch_iteration(mb) == 3
    assert microbatch_id(0, 0, 0) != microbatch_id(0, 1, 0)


# ====
# forward pass
# ====

def test_activation_for_future_iteration_is_held():
    world = FakeWorld()
    node = relay(4, world=world)
    node.on_message(activation(2, 4, mb=10, iteration=1))
    assert node.buffered
    complete = world.of_type(MessageType.COMPLETE)
    assert complete and complete[0].get("held")
    assert not world.computes


def test_full_node_denies_without_computing():
    world = FakeWorld()
    node = relay(4, capacity=1, world=world)
    node.on_message(activation(2, 4, mb=10))
    node.on_message(activation(3, 4, mb=11))
    assert [c[2] for c in world.computes] == [10]
    deny = world.of_type(MessageType.DENY)
    assert len(deny) == 1 and deny[0].dst == 3
    assert world.counters["deny"] == 1


def test_forward_during_aggregation_is_rejected():
    node = relay(4)
    node.phase = Phase.AGGREGATION
    with pytest.raises(NotInPhase):
        node.process_forward(10, 0, 0, 0, 2, None, [0])


def test_gradient_without_activation_is_counted():
    world = FakeWorld()
    node = relay(4, world=world)
    node.on_message(Message(MessageType.GRADIENT, 5, 4, {"mb": 99, "attempt": 0}))
    assert world.counters["missing_activation"] == 1


def test_stale_attempt_is_ignored():
    world = FakeWorld()
    node = relay(4, capacity=2, world=world)
    node.on_message(activation(2, 4, mb=10, attempt=1))
    node.on_message(activation(2, 4, mb=10, attempt=0))
    assert len(world.computes) == 1


# ====
# aggregation
# ====

def _exchange(world, nodes):
    by_id = {n.node_id: n for n in nodes}
    for msg in world.of_type(MessageType.GRADIENT_SHARE):
        by_id[msg.dst].on_message(msg)


def test_stage_replicas_agree_after_aggregation():
    world = FakeWorld(members={1: [4, 5]})
    a, b = relay(4, world=world), relay(5, world=world)
    a.params.accumulate(1)
    a.params.accumulate(2)
    b.params.accumulate(3)

    assert a.begin_aggregation(0)
    assert b.begin_aggregation(0)
    _exchange(world, [a, b])

    assert a.iteration == b.iteration == 1
    assert np.array_equal(a.params.vector, b.params.vector)
    assert a.params.version == b.params.version == 1
    assert {(node, it) for node, it, _ in world.aggregated} == {(4, 0), (5, 0)}


def test_aggregation_waits_for_every_share():
    world = FakeWorld(members={1: [4, 5, 6]})
    a = relay(4, world=world)
    a.begin_aggregation(0)
    a.on_message(Message(MessageType.GRADIENT_SHARE, 5, 4, {"iteration": 0, "vector": [0.0] * 8}))
    assert a.iteration == 0
    a.on_timer({"name": "aggregation", "iteration": 0})
    assert a.iteration == 1


def test_last_stage_signals_can_take_after_aggregation():
    world = FakeWorld(members={1: [4], "prev": [2, 3]})
    node = relay(4, world=world)
    node.begin_aggregation(0)
    assert sorted(m.dst for m in world.of_type(MessageType.CAN_TAKE)) == [2, 3]


# ====
# joining
# ====

def test_new_member_retries_until_member_has_updated():
    world = FakeWorld()
    node = relay(8, world=world, iteration=2, routable_from=2)
    node.on_message(Message(MessageType.PARAMS_REPLY, 4, 8, {"vector": [1.0] * 8, "version": 1, "iteration": 1}))
    assert world.timers[-1][1] == "params_retry"
    assert node.params.version == 0

    node.on_message(Message(MessageType.PARAMS_REPLY, 4, 8, {"vector": [1.0] * 8, "version": 2, "iteration": 2}))
    assert node.params.version == 2
    assert np.array_equal(node.params.vector, np.ones(8))


# ====
# admission
# ====

class LeaderWorld(FakeWorld):
    addition_mode = "gwtf"
    flood_timeout = 50.0

    def __init__(self, members=None, num_stages=2):
        super().__init__(members, num_stages)
        self.reports = []

    def leader(self):
        return 0

    def record_utilization(self, report):
        self.reports.append(report)


def leader_with_candidate(world):
    node = DataPeer(NodeSpec(0, NodeRole.DATA, None, 4, 1.0), world, CONFIG)
    node.on_message(Message(MessageType.JOIN, 7, 0, {"capacity": 3, "compute_cost": 1.0}))
    node.run_admission()
    return node


def utilization_reply(query_id, *rows):
    return Message(MessageType.UTILIZATION_REPLY, 4, 0, {"query_id": query_id, "entries": [list(r) for r in rows]})


def test_leader_admits_as_soon_as_every_relay_reported():
    world = LeaderWorld(members={0: [2, 3], 1: [4]})
    node = leader_with_candidate(world)
    query_id = node.flood.query_id
    assert sorted(m.dst for m in world.of_type(MessageType.UTILIZATION_QUERY)) == [2, 3]

    node.on_message(utilization_reply(query_id, (2, 0, 1, 1), (4, 1, 1, 1)))
    assert node.flood is not None
    assert world.of_type(MessageType.ADMIT) == []

    node.on_message(utilization_reply(query_id, (3, 0, 2, 0), (4, 1, 1, 1)))
    assert node.flood is None
    assert len(world.reports) == 1
    assert world.reports[0].complete
    assert [(m.dst, m.get("stage")) for m in world.of_type(MessageType.ADMIT)] == [(7, 1)]

    node.on_timer({"name": "flood", "query_id": query_id})
    assert len(world.reports) == 1


def test_leader_falls_back_to_partial_report_on_timeout():
    world = LeaderWorld(members={0: [2, 3], 1: [4]})
    node = leader_with_candidate(world)
    query_id = node.flood.query_id
    node.on_message(utilization_reply(query_id, (2, 0, 1, 1)))

    node.on_timer({"name": "flood", "query_id": query_id})
    assert not world.reports[0].complete
    assert [(m.dst, m.get("stage")) for m in world.of_type(MessageType.ADMIT)] == [(7, 0)]
