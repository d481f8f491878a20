# ===== apps/lifecycle/exceptions.py =====


class LifecycleError(Exception):
    """Base class for training-phase violations"""


class NotInPhase(LifecycleError):
    def __init__(self, node_id, expected, actual):
        self.node_id = node_id
        self.expected = expected
        self.actual = actual
        super().__init__(f"Node {node_id} is in {actual}, expected {expected}")


class NoDownstream(LifecycleError):
    def __init__(self, node_id, microbatch):
        self.node_id = node_id
        self.microbatch = microbatch
        super().__init__(f"Node {node_id} has no downstream for microbatch {microbatch}")


class MissingActivation(LifecycleError):
    def __init__(self, node_id, microbatch):
        self.node_id = node_id
        self.microbatch = microbatch
        super().__init__(f"Node {node_id} holds no activation for microbatch {microbatch}")
