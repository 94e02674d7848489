"""Deterministic named random streams derived from one master seed"""
import zlib
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

STREAMS = ("data", "noise", "split", "init", "shuffle", "head")


def derive_seed(master_seed: int, stream: str) -> int:
    """Sub-seed for ``stream``; a pure function of (master_seed, stream)"""
    if master_seed < 0:
        raise ValueError("seeds must be non-negative")
    sequence = np.random.SeedSequence([master_seed, zlib.crc32(stream.encode("utf-8"))])
    return int(sequence.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class ResolvedSeedState:
    """Master seed plus the sub-seed of every named stream

    Explicit seeds in the configuration (dataset, noise, split) pin a stream
    across master seeds so that independent runs share their data.
    """
    master_seed: int
    pinned: Tuple[Tuple[str, int], ...] = ()

    @classmethod
    def resolve(cls, master_seed: int, **pinned: Optional[int]) -> "ResolvedSeedState":
        fixed = tuple(sorted((k, int(v)) for k, v in pinned.items() if v is not None))
        return cls(master_seed, fixed)

    def sub_seed(self, stream: str) -> int:
        for name, seed in self.pinned:
            if name == stream:
                return seed
        return derive_seed(self.master_seed, stream)

    def rng(self, stream: str) -> np.random.Generator:
        return np.random.default_rng(self.sub_seed(stream))

    def to_dict(self) -> Dict[str, int]:
        resolved = {"master": self.master_seed}
        resolved.update({stream: self.sub_seed(stream) for stream in STREAMS})
        return resolved
