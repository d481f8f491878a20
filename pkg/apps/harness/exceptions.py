# ===== apps/harness/exceptions.py =====


class HarnessError(Exception):
    """Base class for experiment harness problems"""


class ZeroMicrobatches(HarnessError):
    def __init__(self, iteration):
        self.iteration = iteration
        super().__init__(f"No microbatch completed in iteration {iteration}")


class ScenarioNotFound(HarnessError):
    def __init__(self, name, directory):
        self.name = name
        self.directory = directory
        super().__init__(f"Scenario '{name}' not found in {directory}")


class RunStalled(HarnessError):
    def __init__(self, time, finished, expected):
        self.time = time
        self.finished = finished
        self.expected = expected
        super().__init__(f"Run stopped at t={time:.3f} with {finished}/{expected} iteration(s) finished")
