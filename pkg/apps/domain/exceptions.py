# ===== apps/domain/exceptions.py =====


class TopologyError(Exception):
    """Base class for topology problems"""


class DuplicateNodeId(TopologyError):
    def __init__(self, node_id):
        self.node_id = node_id
        super().__init__(f"Duplicate node id: {node_id}")


class EmptyStage(TopologyError):
    def __init__(self, stage):
        self.stage = stage
        super().__init__(f"Stage {stage} has no relay")


class MissingLink(TopologyError):
    def __init__(self, src, dst=None):
        self.src = src
        self.dst = dst
        if dst is None:
            super().__init__(f"Node {src} has no link to the next stage")
        else:
            super().__init__(f"No link {src} -> {dst}")


class NonPositiveBandwidth(TopologyError):
    def __init__(self, src, dst, bandwidth):
        self.src = src
        self.dst = dst
        self.bandwidth = bandwidth
        super().__init__(f"Link {src} -> {dst} has bandwidth {bandwidth}")


class UnknownNode(TopologyError):
    def __init__(self, node_id):
        self.node_id = node_id
        super().__init__(f"Unknown node: {node_id}")


class TopologyValidationError(TopologyError):
    """Carries every violation found by validate_topology"""

    def __init__(self, violations):
        self.violations = list(violations)
        summary = "; ".join(str(v) for v in self.violations)
        super().__init__(f"{len(self.violations)} topology violation(s): {summary}")

    def has(self, error_class) -> bool:
        return any(isinstance(v, error_class) for v in self.violations)


class NoDataNode(TopologyError):
    def __init__(self):
        super().__init__("Topology has no data node")
