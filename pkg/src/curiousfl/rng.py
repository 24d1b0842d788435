"""Deterministic random streams keyed by (seed, purpose, round, client).

Every consumer of randomness asks for its own stream, so results never
depend on the order in which clients or rounds are executed.
"""

import zlib

import numpy as np


def stream(seed: int, purpose: str, round_idx: int = 0, client: int = 0) -> np.random.Generator:
    tag = zlib.crc32(purpose.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(tag, int(round_idx), int(client)))
    return np.random.default_rng(ss)
