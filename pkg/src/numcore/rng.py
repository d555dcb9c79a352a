"""
Seeded random streams.

Every stream is a numpy Philox generator (counter-based, 4x64 rounds) keyed by
a 64-bit seed.  Child streams are derived by label, so "data", "init" and
"batches/epoch-3" never share state and can be replayed independently.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

ALGORITHM = "philox4x64"


def derive_seed(seed: int, label: str) -> int:
    """64-bit seed for `label` under `seed`: first 8 bytes of BLAKE2b(seed || label), little-endian."""
    h = hashlib.blake2b(digest_size=8)
    h.update(int(seed).to_bytes(8, "little", signed=False))
    h.update(label.encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class Rng:
    seed: int
    algorithm: str = ALGORITHM

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")

    def derive(self, label: str) -> "Rng":
        return Rng(derive_seed(self.seed, label))

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of this stream."""
        return np.random.Generator(np.random.Philox(key=self.seed))
