from dataclasses import dataclass

import numpy as np

BUCKETS = ("easy", "medium", "hard")


@dataclass(frozen=True)
class SelectionRecord:
    index: int
    score: float | None     # None: every position was masked
    kept_tokens: int
    teacher_ckpt: str


@dataclass
class BucketAssignment:
    buckets: list[str]              # per sequence, one of BUCKETS
    scores: np.ndarray              # teacher per-sequence CE
    log_likelihoods: np.ndarray     # teacher sequence log-likelihood (tie-break)

    def indices(self, bucket: str) -> np.ndarray:
        return np.array([i for i, b in enumerate(self.buckets) if b == bucket], dtype=np.int64)

    def sizes(self) -> dict[str, int]:
        return {b: self.buckets.count(b) for b in BUCKETS}
