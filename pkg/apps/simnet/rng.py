# ===== apps/simnet/rng.py =====
import zlib
from typing import Dict

import numpy as np


class RngStreams:
    """Named, independent substreams derived from one master seed"""

    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed)
        self._streams: Dict[str, np.random.Generator] = {}

    def stream(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            key = zlib.crc32(name.encode("utf-8"))
            self._streams[name] = np.random.default_rng([self.master_seed, key])
        return self._streams[name]

    def node_stream(self, purpose: str, node_id: int) -> np.random.Generator:
        return self.stream(f"{purpose}-{node_id}")
