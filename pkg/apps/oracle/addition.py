# ===== apps/oracle/addition.py =====
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from itertools import permutations
from typing import Dict, Iterable, Sequence, Tuple

from apps.domain.types import LinkSpec, NodeId, NodeSpec, StageId, Topology

from .exceptions import InstanceTooLarge
from .flow_graph import solve_topology

logger = logging.getLogger(__name__)

DEFAULT_PERMUTATION_CAP = 10 ** 6


@dataclass
class AdditionResult:
    assignment: Dict[NodeId, StageId] = field(default_factory=dict)
    objective: float = math.inf
    evaluated: int = 0


def addition_objective(t: Topology) -> float:
    """Estimated time per microbatch: min total cost over squared max flow"""
    solution = solve_topology(t)
    if solution.flow == 0:
        return math.inf
    return solution.total_cost / solution.flow ** 2


def place_candidates(
    t: Topology,
    candidates: Sequence[NodeSpec],
    assignment: Dict[NodeId, StageId],
    links: Iterable[LinkSpec] = (),
) -> Topology:
    placed = [
        dataclasses.replace(c, stage=assignment[c.id], alive=True)
        for c in candidates
        if c.id in assignment
    ]
    placed_ids = {c.id for c in placed}
    kept_links = [
        link for link in links
        if (link.src in placed_ids or t.has_node(link.src))
        and (link.dst in placed_ids or t.has_node(link.dst))
    ]
    return t.with_nodes(placed, kept_links)


def _placements(candidates: Sequence[NodeSpec], num_stages: int) -> Iterable[Dict[NodeId, StageId]]:
    ids = [c.id for c in candidates]
    if len(ids) <= num_stages:
        for stages in permutations(range(num_stages), len(ids)):
            yield dict(zip(ids, stages))
    else:
        for chosen in permutations(ids, num_stages):
            yield {cid: stage for stage, cid in enumerate(chosen)}


def placement_count(num_candidates: int, num_stages: int) -> int:
    n, k = max(num_candidates, num_stages), min(num_candidates, num_stages)
    return math.perm(n, k)


def optimal_addition(
    t: Topology,
    candidates: Sequence[NodeSpec],
    links: Iterable[LinkSpec] = (),
    max_permutations: int = DEFAULT_PERMUTATION_CAP,
) -> AdditionResult:
    """Brute force over injective candidate/stage placements"""
    links = list(links)
    if not candidates:
        return AdditionResult({}, addition_objective(t), 0)

    total = placement_count(len(candidates), t.num_stages)
    if total > max_permutations:
        raise InstanceTooLarge(total, max_permutations)

    best = AdditionResult()
    best_key: Tuple = ()
    for placement in _placements(candidates, t.num_stages):
        objective = addition_objective(place_candidates(t, candidates, placement, links))
        best.evaluated += 1
        key = tuple(sorted(placement.items()))
        if (
            not best.assignment
            or objective < best.objective
            or (objective == best.objective and key < best_key)
        ):
            best.assignment, best.objective, best_key = placement, objective, key
    logger.debug(f"Evaluated {best.evaluated} placements, best objective {best.objective}")
    return best


def capacity_first_assignment(candidates: Sequence[NodeSpec], num_stages: int) -> Dict[NodeId, StageId]:
    """Baseline: biggest candidates first, one per stage in index order.

    Like every method in one admission round, at most `num_stages` candidates are
    placed; the rest are deferred to the next round.
    """
    ordered = sorted(candidates, key=lambda c: (-c.capacity, c.id))
    return {c.id: i for i, c in enumerate(ordered[:num_stages])}


def random_assignment(candidates: Sequence[NodeSpec], num_stages: int, rng) -> Dict[NodeId, StageId]:
    """Baseline: uniform stage for each of the first `num_stages` candidates by id; the rest are deferred"""
    chosen = sorted(candidates, key=lambda c: c.id)[:num_stages]
    return {c.id: int(rng.integers(0, num_stages)) for c in chosen}

