# ===== apps/cost/exceptions.py =====


class MissingEdgeCost(Exception):
    def __init__(self, edge):
        self.edge = edge
        super().__init__(f"No cost for edge {edge[0]} -> {edge[1]}")
