"""
Batch construction: sequential passes over a seeded shuffle, wrapping at epoch ends.
"""

import numpy as np

from src.numcore.rng import Rng


class BatchSampler:
    """
    Yields index batches over range(n).

    Epoch e is the permutation drawn from rng.derive(f"epoch/{e}"); a batch that
    crosses an epoch boundary takes the tail of one permutation and the head of
    the next, so every index is used exactly once per epoch.
    """

    def __init__(self, n: int, batch_size: int, rng: Rng):
        if n < 1 or batch_size < 1:
            raise ValueError(f"need n >= 1 and batch_size >= 1, got n={n} batch_size={batch_size}")
        self._n = n
        self._batch = batch_size
        self._rng = rng
        self._epoch = -1
        self._order = np.empty(0, dtype=np.int64)
        self._pos = 0

    @property
    def epoch(self) -> int:
        return self._epoch

    def _next_epoch(self) -> None:
        self._epoch += 1
        self._order = self._rng.derive(f"epoch/{self._epoch}").generator().permutation(self._n)
        self._pos = 0

    def next_batch(self) -> np.ndarray:
        out = []
        need = self._batch
        while need:
            if self._pos >= self._order.size:
                self._next_epoch()
            take = self._order[self._pos:self._pos + need]
            self._pos += take.size
            need -= take.size
            out.append(take)
        return np.concatenate(out)
