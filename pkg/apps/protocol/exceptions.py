# ===== apps/protocol/exceptions.py =====


class CapacityExhausted(Exception):
    def __init__(self, node_id):
        self.node_id = node_id
        super().__init__(f"Node {node_id} has no capacity left for another outflow")
