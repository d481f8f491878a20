# ===== apps/lifecycle/params.py =====
import logging
from enum import Enum
from typing import Dict, Mapping, Optional

import numpy as np

from apps.domain.types import NodeId, StageId

logger = logging.getLogger(__name__)

DEFAULT_DIM = 8
DEFAULT_ETA = 0.1
DATA_STAGE = -1


class Phase(str, Enum):
    FORMATION = "formation"
    FORWARD = "forward"
    BACKWARD = "backward"
    AGGREGATION = "aggregation"


def _stage_key(stage: Optional[StageId]) -> int:
    return (DATA_STAGE if stage is None else stage) + 1


def initial_params(seed: int, stage: Optional[StageId], dim: int = DEFAULT_DIM) -> np.ndarray:
    return np.random.default_rng([seed, _stage_key(stage), 0]).uniform(-1.0, 1.0, dim)


def pseudo_gradient(seed: int, stage: Optional[StageId], microbatch: int, dim: int = DEFAULT_DIM) -> np.ndarray:
    """Deterministic stand-in gradient so replicas agree exactly"""
    return np.random.default_rng([seed, _stage_key(stage), microbatch + 1]).uniform(-1.0, 1.0, dim)


def aggregate(params: np.ndarray, shares: Mapping[NodeId, np.ndarray], eta: float = DEFAULT_ETA) -> np.ndarray:
    """params - eta * mean(shares), summed in NodeId order"""
    if not shares:
        return params.copy()
    total = np.zeros_like(params)
    for node in sorted(shares):
        total = total + shares[node]
    return params - eta * (total / len(shares))


class StageParams:
    def __init__(self, stage: Optional[StageId], seed: int, dim: int = DEFAULT_DIM,
                 vector: Optional[np.ndarray] = None, version: int = 0):
        self.stage = stage
        self.seed = seed
        self.dim = dim
        self.vector = initial_params(seed, stage, dim) if vector is None else np.array(vector, dtype=float)
        self.version = version
        self.contributions: Dict[int, np.ndarray] = {}

    def accumulate(self, microbatch: int):
        # a redone microbatch overwrites its earlier contribution
        self.contributions[microbatch] = pseudo_gradient(self.seed, self.stage, microbatch, self.dim)

    @property
    def accumulator(self) -> np.ndarray:
        total = np.zeros(self.dim)
        for microbatch in sorted(self.contributions):
            total = total + self.contributions[microbatch]
        return total

    def apply(self, shares: Mapping[NodeId, np.ndarray], eta: float = DEFAULT_ETA):
        self.vector = aggregate(self.vector, shares, eta)
        self.contributions.clear()
        self.version += 1
        logger.debug(f"Stage {self.stage} params now at version {self.version}")

    def copy_from(self, vector, version: int):
        self.vector = np.array(vector, dtype=float)
        self.version = version
        self.contributions.clear()

    def digest(self) -> tuple:
        return self.version, tuple(float(x) for x in self.vector)
