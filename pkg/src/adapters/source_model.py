"""
A GroundTruthSource used as a NextTokenModel.

Serves as the Bayes-optimal predictor in the diagnostics, as an oracle
teacher, and as a cheap exactly-known model in tests.  Zero-probability
entries come out as -inf unless a floor is applied.
"""

import numpy as np

from src.domain.model import NextTokenModel
from src.domain.source import GroundTruthSource
from src.lm.distributions import apply_floor


class SourceAsModel(NextTokenModel):

    def __init__(self, source: GroundTruthSource, floor: float = 0.0, model_id: str | None = None):
        self._source = source
        self._floor = floor
        self._id = model_id or f"oracle:{source.source_id}"
        apply_floor(np.full(2, 0.5), floor)

    @property
    def source(self) -> GroundTruthSource:
        return self._source

    @property
    def vocab_size(self) -> int:
        return self._source.vocab_size

    @property
    def model_id(self) -> str:
        return self._id

    def log_probs(self, tokens) -> np.ndarray:
        table = apply_floor(self._source.conditional_table(tokens), self._floor)
        with np.errstate(divide="ignore"):
            return np.log(table)
