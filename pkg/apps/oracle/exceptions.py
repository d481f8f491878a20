# ===== apps/oracle/exceptions.py =====


class InstanceTooLarge(Exception):
    def __init__(self, size, limit):
        self.size = size
        self.limit = limit
        super().__init__(f"Instance needs {size} evaluations, limit is {limit}")


class NoAvailableSuccessor(Exception):
    def __init__(self, node_id):
        self.node_id = node_id
        super().__init__(f"Node {node_id} has no next-stage node with spare capacity")
