# ===== apps/harness/scenarios.py =====
import dataclasses
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import yaml
from django.conf import settings

from apps.domain.builders import layered_topology
from apps.domain.types import LinkSpec, NodeId, NodeRole, NodeSpec, Topology
from apps.lifecycle.peer import GREEDY, RuntimeConfig
from apps.protocol.agent import ProtocolConfig
from apps.recovery.repair import GWTF, PIPELINE_RESTART

from .exceptions import ScenarioNotFound

logger = logging.getLogger(__name__)

TRAINING = "training"
FLOW = "flow"
ADDITION = "addition"
OPTIMALITY = "optimality"

KIND_CHOICES = (TRAINING, FLOW, ADDITION, OPTIMALITY)
ROUTING_CHOICES = (GWTF, GREEDY)
RECOVERY_CHOICES = (GWTF, PIPELINE_RESTART)
ADDITION_CHOICES = (GWTF, "capacity-first", "random")


@dataclass(frozen=True)
class Distribution:
    """Constant when low == high, otherwise floor(U(low, high)); `phi` adds the node's max interlayer cost"""

    low: float
    high: float
    phi: bool = False

    @classmethod
    def constant(cls, value: float) -> "Distribution":
        return cls(value, value)

    @property
    def is_constant(self) -> bool:
        return self.low == self.high

    def draw(self, rng) -> float:
        if self.is_constant:
            return float(self.low)
        return float(math.floor(rng.uniform(self.low, self.high)))

    def as_dict(self) -> dict:
        return {"low": self.low, "high": self.high, "phi": self.phi}

    def __str__(self):
        text = str(self.low) if self.is_constant else f"floor(U({self.low}, {self.high}))"
        return f"phi + {text}" if self.phi else text


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    stages: int
    relays: int
    kind: str = TRAINING
    description: str = ""
    relays_per_stage: Tuple[int, ...] = ()
    random_stage_sizes: bool = False
    data_nodes: int = 1
    data_capacity: Optional[int] = None
    microbatches: int = 4
    capacity: Distribution = Distribution.constant(1)
    interlayer: Distribution = Distribution.constant(1)
    intralayer: Optional[Distribution] = None
    bandwidth: Optional[Distribution] = None
    activation_size: float = 0.0
    compute_cost: Distribution = Distribution.constant(0)
    candidates: int = 0
    candidate_capacity: Optional[Distribution] = None
    churn: float = 0.0
    iterations: int = 1
    routing: str = GWTF
    recovery: str = GWTF
    addition: str = GWTF
    t0: float = 1.7
    alpha: float = 0.95
    window: int = 5
    k: float = 3.0
    gamma: float = 0.5
    eta: float = 0.1
    dim: int = 8
    max_rounds: int = 120
    max_queue: int = 200_000
    permutation_cap: int = 10 ** 6
    seed: int = 0
    jitter: float = 0.0
    latency_bound: Optional[float] = None
    congestion: bool = False
    round_interval: Optional[float] = None
    deadline_rounds: int = 60
    registry_ttl_rounds: int = 3
    time_scale: str = ""

    @property
    def total_data_capacity(self) -> int:
        return self.data_capacity if self.data_capacity is not None else self.microbatches

    def replace(self, **changes) -> "ScenarioConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return dataclasses.replace(self, **changes)

    def protocol_config(self) -> ProtocolConfig:
        return ProtocolConfig(t0=self.t0, alpha=self.alpha, window=self.window)

    def runtime_config(self) -> RuntimeConfig:
        return RuntimeConfig(
            routing=self.routing,
            recovery=self.recovery,
            microbatches=self.microbatches,
            iterations=self.iterations,
            k=self.k,
            gamma=self.gamma,
            eta=self.eta,
            dim=self.dim,
            seed=self.seed,
            window=self.window,
            max_formation_rounds=self.max_rounds,
            protocol=self.protocol_config(),
        )

    def as_dict(self) -> dict:
        data = dataclasses.asdict(self)
        data["relays_per_stage"] = list(self.relays_per_stage)
        return data


# ============================================================
# LOADING
# ============================================================

def scenario_path(name: str, directory=None) -> Path:
    directory = Path(directory or settings.GWTF_SCENARIO_DIR)
    candidate = Path(name)
    if candidate.suffix in (".yaml", ".yml") and candidate.exists():
        return candidate
    for suffix in (".yaml", ".yml"):
        path = directory / f"{name}{suffix}"
        if path.exists():
            return path
    raise ScenarioNotFound(name, directory)


def load_scenario(name: str, directory=None, **overrides) -> ScenarioConfig:
    """Read a YAML scenario, apply CLI overrides and validate it"""
    from .serializers import ScenarioConfigSerializer

    path = scenario_path(name, directory)
    with open(path) as f:
        data = yaml.safe_load(f) or {}
    data.setdefault("name", path.stem)
    data.update({k: v for k, v in overrides.items() if v is not None})

    serializer = ScenarioConfigSerializer(data=data)
    serializer.is_valid(raise_exception=True)
    config = serializer.save()
    logger.info(f"Loaded scenario '{config.name}' ({config.kind}) from {path}")
    return config


def list_scenarios(directory=None) -> List[str]:
    directory = Path(directory or settings.GWTF_SCENARIO_DIR)
    return sorted(p.stem for p in directory.glob("*.yaml"))


# ============================================================
# TOPOLOGY GENERATION
# ============================================================

def stage_sizes(config: ScenarioConfig, rng) -> List[int]:
    if config.relays_per_stage:
        return list(config.relays_per_stage)
    if config.random_stage_sizes:
        sizes = [1] * config.stages
        for _ in range(config.relays - config.stages):
            sizes[int(rng.integers(0, config.stages))] += 1
        return sizes
    base, extra = divmod(config.relays, config.stages)
    return [base + (1 if s < extra else 0) for s in range(config.stages)]


def _layer_of(spec: NodeSpec, num_stages: int) -> int:
    return -1 if spec.is_data else spec.stage


def _adjacent(a: int, b: int, num_stages: int) -> bool:
    if a == -1 or b == -1:
        other = b if a == -1 else a
        return other in (0, num_stages - 1)
    return abs(a - b) == 1


def draw_link_costs(config: ScenarioConfig, nodes: List[NodeSpec], rng) -> Dict[Tuple[NodeId, NodeId], float]:
    """Symmetric link costs over every node pair.

    Adjacent layers draw from `interlayer`; same-layer pairs from `intralayer`, offset
    by the larger phi of the two ends when the distribution asks for it.
    """
    layers = {n.id: _layer_of(n, config.stages) for n in nodes}
    ids = sorted(layers)
    pairs = [(a, b) for i, a in enumerate(ids) for b in ids[i + 1:]]

    costs: Dict[Tuple[NodeId, NodeId], float] = {}
    phi: Dict[NodeId, float] = {n: 0.0 for n in ids}
    same_layer = []
    for a, b in pairs:
        if layers[a] == layers[b]:
            same_layer.append((a, b))
            continue
        cost = config.interlayer.draw(rng)
        costs[(a, b)] = cost
        if _adjacent(layers[a], layers[b], config.stages):
            phi[a] = max(phi[a], cost)
            phi[b] = max(phi[b], cost)

    intralayer = config.intralayer or config.interlayer
    for a, b in same_layer:
        offset = max(phi[a], phi[b]) if intralayer.phi else 0.0
        costs[(a, b)] = offset + intralayer.draw(rng)
    return costs


def build_topology(config: ScenarioConfig, rng) -> Topology:
    sizes = stage_sizes(config, rng)
    relay_capacities = [[max(1, int(config.capacity.draw(rng))) for _ in range(size)] for size in sizes]
    data_capacities = [config.total_data_capacity] * config.data_nodes

    total = config.data_nodes + sum(sizes)
    compute_costs = {n: config.compute_cost.draw(rng) for n in range(total)}
    skeleton = layered_topology(relay_capacities, data_capacities, compute_costs=compute_costs)

    latency = draw_link_costs(config, list(skeleton.nodes), rng)
    bandwidth = 1.0
    if config.bandwidth is not None:
        bandwidth = {pair: config.bandwidth.draw(rng) for pair in sorted(latency)}

    topology = layered_topology(relay_capacities, data_capacities, latency=latency, bandwidth=bandwidth,
                                activation_size=config.activation_size, compute_costs=compute_costs,
                                full_mesh=True)
    logger.debug(f"Scenario '{config.name}': stage sizes {sizes}, {len(topology.links)} links")
    return topology


def build_candidates(config: ScenarioConfig, topology: Topology, rng) -> Tuple[List[NodeSpec], List[LinkSpec]]:
    """Candidate relays with links to every existing node and to each other"""
    if config.candidates <= 0:
        return [], []
    dist = config.candidate_capacity or config.capacity
    first = max(topology.node_ids) + 1
    candidates = [
        NodeSpec(first + i, NodeRole.RELAY, None, max(1, int(dist.draw(rng))), config.compute_cost.draw(rng))
        for i in range(config.candidates)
    ]
    others = list(topology.node_ids)
    links = []
    for i, candidate in enumerate(candidates):
        peers = others + [c.id for c in candidates[:i]]
        for peer in peers:
            cost = config.interlayer.draw(rng)
            bw = config.bandwidth.draw(rng) if config.bandwidth is not None else 1.0
            links.append(LinkSpec(candidate.id, peer, cost, bw))
            links.append(LinkSpec(peer, candidate.id, cost, bw))
    return candidates, links
