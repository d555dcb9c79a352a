"""
GroundTruthSource port: the data distribution D the corpora are drawn from.

A source answers exact conditional queries D(. | x_<t), which is what lets the
diagnostics compute theory quantities exactly instead of estimating them.
"""

import hashlib
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from src.numcore.rng import Rng


@dataclass
class Corpus:
    tokens: np.ndarray     # [N, T] int64, every id < vocab_size
    vocab_size: int
    provenance: dict = field(default_factory=dict)   # source id, seed, stream label

    def __post_init__(self):
        tokens = np.asarray(self.tokens)
        if tokens.ndim != 2 or 0 in tokens.shape:
            raise ValueError(f"corpus tokens must be a non-empty [N, T] array, got shape {tokens.shape}")
        if not np.issubdtype(tokens.dtype, np.integer):
            raise ValueError(f"corpus tokens must be integers, got dtype {tokens.dtype}")
        if tokens.min() < 0 or tokens.max() >= self.vocab_size:
            raise ValueError(
                f"corpus ids must lie in [0, {self.vocab_size}), got [{tokens.min()}, {tokens.max()}]"
            )
        self.tokens = tokens.astype(np.int64)

    @property
    def n_sequences(self) -> int:
        return self.tokens.shape[0]

    @property
    def seq_len(self) -> int:
        return self.tokens.shape[1]

    def subset(self, indices, **provenance) -> "Corpus":
        """Sequences at `indices`, in that order."""
        return Corpus(self.tokens[np.asarray(indices, dtype=np.int64)], self.vocab_size,
                      {**self.provenance, **provenance})

    def content_hash(self) -> str:
        """SHA-256 over (V, N, T, ids as little-endian u32); independent of provenance."""
        h = hashlib.sha256()
        h.update(np.array([self.vocab_size, *self.tokens.shape], dtype="<u4").tobytes())
        h.update(self.tokens.astype("<u4").tobytes())
        return h.hexdigest()


class GroundTruthSource(ABC):
    """
    Port: an exactly queryable distribution over fixed-length token sequences.

    Implementations are immutable after construction, so one instance can be
    shared between the corpus generator and every diagnostic.
    """

    @property
    @abstractmethod
    def vocab_size(self) -> int:
        ...

    @property
    @abstractmethod
    def order(self) -> int:
        """Number of preceding tokens a conditional depends on."""
        ...

    @property
    @abstractmethod
    def source_id(self) -> str:
        """Stable identifier recorded in corpus provenance."""
        ...

    @abstractmethod
    def true_conditional(self, prefix) -> np.ndarray:
        """D(. | prefix) as a length-V distribution.  Prefix may be empty."""
        ...

    @abstractmethod
    def conditional_table(self, tokens) -> np.ndarray:
        """
        For a [B, T] batch, the [B, T, V] array whose row t is D(. | x_<t).

        Same layout as a model's log-prob output, but in probability space.
        """
        ...

    @abstractmethod
    def sample(self, n: int, length: int, rng: Rng) -> np.ndarray:
        """
        n i.i.d. sequences of `length` tokens as an [n, length] int64 array.

        Sequence i uses its own stream rng.derive(f"seq/{i}"), so any sequence can
        be regenerated without the others.
        """
        ...

    def sequence_probability(self, tokens) -> np.ndarray:
        """D(x) for each row of a [B, T] batch."""
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim == 1:
            tokens = tokens[None, :]
        table = self.conditional_table(tokens)
        picked = np.take_along_axis(table, tokens[..., None], axis=-1)[..., 0]
        return picked.prod(axis=-1)
