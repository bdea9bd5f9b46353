"""Named random streams derived from one master seed.

Each stream is keyed by a stable hash of its name, so adding or removing a
consumer never shifts the randomness seen by the others.
"""

import zlib

import numpy as np

STREAMS = ("env-train", "env-eval", "agent-init", "noise", "replay-sampling",
           "model", "planning", "linear")


def stream(seed: int, name: str) -> np.random.Generator:
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(key,)))


def streams(seed: int, names=STREAMS) -> dict:
    return {name: stream(seed, name) for name in names}
