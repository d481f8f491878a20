import pytest

from apps.domain.builders import layered_topology
from apps.domain.exceptions import (
    DuplicateNodeId,
    EmptyStage,
    MissingLink,
    NonPositiveBandwidth,
    TopologyValidationError,
    UnknownNode,
)
from apps.domain.types import LinkSpec, Microbatch, NodeRole, NodeSpec, Topology
from apps.domain.validation import NEXT, PREV, stage_neighbors, validate_topology


def test_minimal_topology_is_valid():
    t = layered_topology([[1], [1]])
    assert validate_topology(t) is t


def test_duplicate_node_id_reported():
    t = layered_topology([[1], [1]])
    dup = NodeSpec(t.nodes[-1].id, NodeRole.RELAY, 0, 1)
    bad = Topology(t.nodes + (dup,), t.links, t.num_stages)
    with pytest.raises(TopologyValidationError) as exc:
        validate_topology(bad)
    assert exc.value.has(DuplicateNodeId)
    assert any(getattr(v, "node_id", None) == dup.id for v in exc.value.violations)


def test_empty_stage_reported():
    t = layered_topology([[1], [1]])
    nodes = tuple(n for n in t.nodes if n.stage != 1)
    bad = Topology(nodes, t.links, 2)
    with pytest.raises(TopologyValidationError) as exc:
        validate_topology(bad)
    assert any(isinstance(v, EmptyStage) and v.stage == 1 for v in exc.value.violations)


def test_every_violation_is_listed():
    t = layered_topology([[1], [1]])
    links = {k: v for k, v in t.links.items() if k != (1, 2)}
    links[(0, 1)] = LinkSpec(0, 1, 1.0, 0.0)
    bad = Topology(t.nodes, links, 2)
    with pytest.raises(TopologyValidationError) as exc:
        validate_topology(bad)
    assert exc.value.has(MissingLink)
    assert exc.value.has(NonPositiveBandwidth)


def test_stage_neighbors_boundaries():
    t = layered_topology([[1, 1], [1], [1, 2]], data_capacities=[2, 2])
    first = t.relays(0)[0].id
    last = t.relays(2)[0].id
    middle = t.relays(1)[0].id
    assert stage_neighbors(t, first, PREV) == {0, 1}
    assert stage_neighbors(t, last, NEXT) == {0, 1}
    assert stage_neighbors(t, middle, NEXT) == {r.id for r in t.relays(2)}
    assert stage_neighbors(t, 0, NEXT) == {r.id for r in t.relays(0)}


def test_stage_neighbors_skips_crashed_nodes():
    t = layered_topology([[1], [1, 1]])
    crashed = t.relays(1)[0].id
    t = t.with_alive(crashed, False)
    assert crashed not in stage_neighbors(t, t.relays(0)[0].id, NEXT)


def test_stage_neighbors_unknown_node():
    t = layered_topology([[1]])
    with pytest.raises(UnknownNode):
        stage_neighbors(t, 99, NEXT)


def test_microbatch_path_starts_at_origin():
    mb = Microbatch(id=7, origin=3)
    assert mb.path == [3]
