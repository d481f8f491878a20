# ===== apps/protocol/annealing.py =====
import math
from dataclasses import dataclass

DEFAULT_T0 = 1.7
DEFAULT_ALPHA = 0.95


def annealing_accept(cost_current: float, cost_new: float, temperature: float, u: float) -> bool:
    """Metropolis rule: accept iff exp((current - new) / T) > u"""
    if temperature <= 0:
        raise ValueError(f"Temperature must be positive, got {temperature}")
    exponent = (cost_current - cost_new) / temperature
    if exponent >= 0:
        return 1.0 > u if exponent == 0 else True
    return math.exp(exponent) > u


@dataclass
class AnnealerState:
    t0: float = DEFAULT_T0
    alpha: float = DEFAULT_ALPHA
    temperature: float = DEFAULT_T0
    accepted: int = 0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"Cooling factor must be in (0, 1), got {self.alpha}")
        self.temperature = self.t0

    def cool(self):
        self.temperature *= self.alpha
        self.accepted += 1

    def reset(self):
        self.temperature = self.t0
        self.accepted = 0
