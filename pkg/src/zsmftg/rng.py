"""Counter-based random streams.

Every random quantity is drawn from a Philox generator whose key is derived
from the master seed plus a tuple of integers naming its purpose.  Two
streams with the same (seed, key) produce the same numbers no matter which
worker builds them or in which order, which is what keeps parallel runs
bitwise equal to serial ones.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# purpose tags (first element of every key)
ROLLOUT = 1
PERTURBATION = 2
N_AGENT = 3
TRAIN = 4
COMMON = 5
IDIO = 6
SPHERE = 7


@dataclass(frozen=True)
class Stream:
    seed: int
    key: tuple = ()

    def __post_init__(self):
        seed = int(self.seed)
        if seed < 0:
            raise ValueError("seed must be non-negative")
        object.__setattr__(self, "seed", seed)
        object.__setattr__(self, "key", tuple(int(k) for k in self.key))

    def child(self, *key) -> "Stream":
        return Stream(self.seed, self.key + tuple(key))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        return np.random.Generator(np.random.Philox(ss))


def as_stream(stream) -> Stream:
    if isinstance(stream, Stream):
        return stream
    if stream is None:
        return Stream(0)
    return Stream(int(stream))
