"""
NextTokenModel port: anything that emits per-position next-token distributions.

Selection, evaluation and the diagnostics only ever ask a model for
log P(v | x_<t), so a trained transformer, a floored transformer and the
ground-truth source itself are interchangeable behind this interface.
"""

from abc import ABC, abstractmethod

import numpy as np


class NextTokenModel(ABC):

    @property
    @abstractmethod
    def vocab_size(self) -> int:
        ...

    @property
    @abstractmethod
    def model_id(self) -> str:
        """Identifier recorded wherever this model's outputs are written (e.g. checkpoint name)."""
        ...

    @abstractmethod
    def log_probs(self, tokens) -> np.ndarray:
        """
        [B, T] int tokens -> [B, T, V] float64 log-probabilities.

        Row t is log P(. | x_<t); it must not depend on x_t or later tokens.
        """
        ...

    def greedy(self, tokens) -> np.ndarray:
        """[B, T] argmax predictions; ties go to the smallest token id."""
        return np.argmax(self.log_probs(tokens), axis=-1)
