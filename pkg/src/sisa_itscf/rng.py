"""Keyed counter-based random streams.

Every stochastic draw in training comes from a Philox stream whose key is
derived from ``(root seed, purpose, shard, stage, epoch, sub)``. A stream's
output depends on nothing else, so shards can run in any order (or in
parallel) and removing data from one stage cannot shift the randomness seen
by another.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np


def _tag_code(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


@dataclass(frozen=True)
class RngStream:
    root: int
    tag: str
    shard: int = 0
    stage: int = 0
    epoch: int = 0

    def key(self, sub: int = 0) -> np.ndarray:
        seq = np.random.SeedSequence(
            [int(self.root), _tag_code(self.tag), int(self.shard), int(self.stage), int(self.epoch), int(sub)]
        )
        return seq.generate_state(2, dtype=np.uint64)

    def generator(self, sub: int = 0) -> np.random.Generator:
        """Fresh generator at draw index 0 of sub-stream ``sub``."""
        return np.random.Generator(np.random.Philox(key=self.key(sub)))
