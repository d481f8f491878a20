# ===== apps/recovery/exceptions.py =====


class IrreparablePath(Exception):
    def __init__(self, microbatch, stage):
        self.microbatch = microbatch
        self.stage = stage
        super().__init__(f"Microbatch {microbatch}: stage {stage} has no alive node left")


class InvalidSample(ValueError):
    def __init__(self, peer, rtt):
        self.peer = peer
        self.rtt = rtt
        super().__init__(f"Round-trip sample {rtt} from peer {peer} must be positive")
