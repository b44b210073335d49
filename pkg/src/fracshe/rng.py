"""Counter-based random streams.

A stream is identified by ``(seed, member)``.  Each draw is addressed by
``(step, purpose)`` and written into the Philox counter, so the numbers used
for a given member and step never depend on how work is scheduled.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

# counter word 3 separates independent uses of one member stream
NOISE = 0
INIT = 1
PAIRING = 2
FBM = 3
SHUFFLE = 4
BOOTSTRAP = 5


@dataclass(frozen=True)
class Stream:
    seed: int
    member: int = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if int(self.member) < 0:
            raise ValueError("member id must be nonnegative")

    @cached_property
    def key(self) -> np.ndarray:
        return np.random.SeedSequence([int(self.seed), int(self.member)]).generate_state(2, np.uint64)

    def generator(self, step: int = 0, purpose: int = NOISE) -> np.random.Generator:
        counter = np.array([0, 0, int(step), int(purpose)], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=self.key, counter=counter))

    def normal(self, shape, step: int = 0, purpose: int = NOISE) -> np.ndarray:
        return self.generator(step, purpose).standard_normal(shape)

    def spawn(self, member: int) -> "Stream":
        return Stream(self.seed, member)
