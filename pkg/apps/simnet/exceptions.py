# ===== apps/simnet/exceptions.py =====


class EventStorm(Exception):
    def __init__(self, size, limit, time):
        self.size = size
        self.limit = limit
        self.time = time
        super().__init__(f"Event queue reached {size} (limit {limit}) at t={time:.3f}")
