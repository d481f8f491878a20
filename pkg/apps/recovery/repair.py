# ===== apps/recovery/repair.py =====
import logging
from dataclasses import dataclass, field
from typing import Callable, Collection, Dict, List, Optional, Sequence

from apps.domain.types import NodeId

from .exceptions import IrreparablePath

logger = logging.getLogger(__name__)

GWTF = "gwtf"
PIPELINE_RESTART = "pipeline-restart"

# stage index, previous node on the new path, nodes known dead
ReplacementChooser = Callable[[int, NodeId, Collection[NodeId]], Optional[NodeId]]


@dataclass(frozen=True)
class RepairPlan:
    path: List[NodeId]
    new_path: List[NodeId]
    dead: List[NodeId]
    replacements: Dict[int, NodeId]
    recomputed_stages: int
    resume_from: Optional[int]

    @property
    def needed(self) -> bool:
        return bool(self.dead)


def plan_backward_repair(
    microbatch: int,
    path: Sequence[NodeId],
    is_alive: Callable[[NodeId], bool],
    choose_replacement: ReplacementChooser,
    mode: str = GWTF,
) -> RepairPlan:
    """Replace every dead relay on `path` (data node at both ends).

    The node before the first dead relay resends its stored activation; survivors
    after it keep their gradients. In pipeline-restart mode every stage recomputes.
    """
    if mode not in (GWTF, PIPELINE_RESTART):
        raise ValueError(f"Unsupported recovery mode: {mode}")
    path = list(path)
    dead = [node for node in path[1:-1] if not is_alive(node)]
    if not dead:
        return RepairPlan(path, path, [], {}, 0, None)

    new_path = [path[0]]
    replacements: Dict[int, NodeId] = {}
    for index, node in enumerate(path[1:-1], start=1):
        if node in dead:
            replacement = choose_replacement(index - 1, new_path[-1], dead)
            if replacement is None:
                raise IrreparablePath(microbatch, index - 1)
            replacements[index] = replacement
            node = replacement
        new_path.append(node)
    new_path.append(path[-1])

    first_dead = min(replacements)
    recomputed = len(path) - 2 if mode == PIPELINE_RESTART else len(replacements)
    logger.warning(f"Microbatch {microbatch}: replacing {len(dead)} crashed node(s), "
                   f"{recomputed} stage(s) recompute forward")
    return RepairPlan(path, new_path, dead, replacements, recomputed, first_dead - 1)


@dataclass
class RepairChase:
    """Data-node side ping chase along a stalled microbatch's path"""

    microbatch: int
    path: List[NodeId]
    index: int = 1
    dead: List[NodeId] = field(default_factory=list)
    holders: List[NodeId] = field(default_factory=list)

    @property
    def current(self) -> Optional[NodeId]:
        if self.index >= len(self.path) - 1:
            return None
        return self.path[self.index]

    @property
    def done(self) -> bool:
        return self.current is None

    def on_ack(self, node: NodeId, has_gradient: bool) -> Optional[NodeId]:
        if node != self.current:
            return self.current
        if has_gradient:
            self.holders.append(node)
        self.index += 1
        return self.current

    def on_timeout(self, node: NodeId) -> Optional[NodeId]:
        if node != self.current:
            return self.current
        self.dead.append(node)
        self.index += 1
        return self.current
