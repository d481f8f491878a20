# ===== apps/membership/exceptions.py =====


class MembershipError(Exception):
    """Base class for membership problems"""


class NoDataNodeAlive(MembershipError):
    def __init__(self):
        super().__init__("No data node is alive, the run cannot continue")


class UnknownStage(MembershipError):
    def __init__(self, stage, num_stages):
        self.stage = stage
        self.num_stages = num_stages
        super().__init__(f"Stage {stage} does not exist (pipeline has {num_stages} stages)")


class InvalidCandidate(MembershipError):
    def __init__(self, node_id, reason):
        self.node_id = node_id
        self.reason = reason
        super().__init__(f"Candidate {node_id} rejected: {reason}")


class FloodTimeout(MembershipError):
    def __init__(self, query_id, missing_stages):
        self.query_id = query_id
        self.missing_stages = missing_stages
        super().__init__(f"Utilization query {query_id} timed out without stages {sorted(missing_stages)}")
