"""
NextTokenModel backed by an LmModel, optionally floored.

Forward passes run in chunks of sequences so that exhaustive enumerations
(V^T sequences) do not build one enormous tape.
"""

import numpy as np

from src.domain.model import NextTokenModel
from src.lm.distributions import floor_log_probs
from src.lm.model import LmModel, check_tokens, forward_log_probs_batch


class TransformerModel(NextTokenModel):

    def __init__(self, model: LmModel, floor: float = 0.0, model_id: str = "transformer", chunk_size: int = 512):
        self._model = model
        self._floor = floor
        self._id = model_id
        self._chunk = chunk_size
        floor_log_probs(np.zeros(2), floor)  # validates the floor range

    @property
    def model(self) -> LmModel:
        return self._model

    @property
    def floor(self) -> float:
        return self._floor

    @property
    def vocab_size(self) -> int:
        return self._model.config.vocab_size

    @property
    def model_id(self) -> str:
        return self._id

    def with_floor(self, floor: float) -> "TransformerModel":
        return TransformerModel(self._model, floor, self._id, self._chunk)

    def log_probs(self, tokens) -> np.ndarray:
        tokens = check_tokens(self._model.config, tokens)
        chunks = [
            forward_log_probs_batch(self._model, tokens[i:i + self._chunk])
            for i in range(0, tokens.shape[0], self._chunk)
        ]
        out = np.concatenate(chunks, axis=0)
        return floor_log_probs(out, self._floor) if self._floor else out
