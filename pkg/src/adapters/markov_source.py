"""
Order-m Markov source: a GroundTruthSource backed by an explicit transition table.

Contexts are the last m tokens, indexed base-V with the oldest token most
significant.  While fewer than m tokens have been seen the initial distribution
applies, so every position of a sequence has an exactly known conditional.
"""

import logging

import numpy as np

from src.domain.errors import ConfigError
from src.domain.source import GroundTruthSource
from src.numcore.rng import Rng

log = logging.getLogger(__name__)

MAX_ORDER = 3
MAX_TABLE_ENTRIES = 2**24
ROW_TOL = 1e-12


class MarkovSource(GroundTruthSource):

    def __init__(self, table: np.ndarray, initial: np.ndarray, order: int, source_id: str = "markov"):
        table = np.asarray(table, dtype=np.float64)
        initial = np.asarray(initial, dtype=np.float64)
        vocab = initial.shape[-1]
        if not 0 <= order <= MAX_ORDER:
            raise ConfigError(f"order must lie in [0, {MAX_ORDER}], got {order}")
        if table.shape != (vocab**order, vocab):
            raise ConfigError(f"table shape {table.shape} does not match V={vocab}, order={order}")
        for what, rows in (("table", table), ("initial", initial[None, :])):
            if np.any(rows < 0) or np.any(np.abs(rows.sum(axis=-1) - 1.0) > ROW_TOL):
                raise ConfigError(f"{what} rows must be non-negative and sum to 1 within {ROW_TOL}")
        self._table = table
        self._initial = initial
        self._order = order
        self._vocab = vocab
        self._id = source_id
        self._powers = vocab ** np.arange(order - 1, -1, -1, dtype=np.int64)

    @property
    def vocab_size(self) -> int:
        return self._vocab

    @property
    def order(self) -> int:
        return self._order

    @property
    def source_id(self) -> str:
        return self._id

    @property
    def table(self) -> np.ndarray:
        return self._table

    @property
    def initial(self) -> np.ndarray:
        return self._initial

    def _rows(self, context: np.ndarray) -> np.ndarray:
        """Conditional rows for a [B, m] block of context tokens."""
        if self._order == 0:
            return np.broadcast_to(self._table[0], (context.shape[0], self._vocab))
        return self._table[context @ self._powers]

    def true_conditional(self, prefix) -> np.ndarray:
        prefix = np.asarray(prefix, dtype=np.int64).reshape(-1)
        if prefix.size and (prefix.min() < 0 or prefix.max() >= self._vocab):
            raise ValueError(f"prefix ids must lie in [0, {self._vocab})")
        if prefix.size < self._order:
            return self._initial.copy()
        context = prefix[prefix.size - self._order:]
        return np.array(self._rows(context[None, :])[0])

    def conditional_table(self, tokens) -> np.ndarray:
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim == 1:
            tokens = tokens[None, :]
        batch, length = tokens.shape
        out = np.empty((batch, length, self._vocab))
        for t in range(length):
            if t < self._order:
                out[:, t] = self._initial
            else:
                out[:, t] = self._rows(tokens[:, t - self._order:t])
        return out

    def sample(self, n: int, length: int, rng: Rng) -> np.ndarray:
        if n < 1 or length < 1:
            raise ValueError(f"need n >= 1 and length >= 1, got n={n} length={length}")
        # one uniform per position, from a per-sequence stream
        uniforms = np.stack([rng.derive(f"seq/{i}").generator().random(length) for i in range(n)])
        tokens = np.zeros((n, length), dtype=np.int64)
        for t in range(length):
            if t < self._order:
                rows = np.broadcast_to(self._initial, (n, self._vocab))
            else:
                rows = self._rows(tokens[:, t - self._order:t])
            cdf = np.cumsum(rows, axis=-1)
            tokens[:, t] = np.minimum((cdf <= uniforms[:, t:t + 1]).sum(axis=-1), self._vocab - 1)
        return tokens


def make_markov_source(order: int, vocab_size: int, concentration: float, seed: Rng | int) -> MarkovSource:
    """Rows (and the initial distribution) drawn from a symmetric Dirichlet(concentration)."""
    rng = seed if isinstance(seed, Rng) else Rng(seed)
    if not 0 <= order <= MAX_ORDER:
        raise ConfigError(f"order must lie in [0, {MAX_ORDER}], got {order}")
    if vocab_size < 2:
        raise ConfigError(f"vocab_size must be >= 2, got {vocab_size}")
    if concentration <= 0.0:
        raise ConfigError(f"Dirichlet concentration must be positive, got {concentration}")
    entries = vocab_size**order * vocab_size
    if entries > MAX_TABLE_ENTRIES:
        raise ConfigError(f"transition table would hold {entries} entries (> {MAX_TABLE_ENTRIES})")

    alpha = np.full(vocab_size, float(concentration))
    table = rng.derive("table").generator().dirichlet(alpha, size=vocab_size**order)
    initial = rng.derive("initial").generator().dirichlet(alpha)
    table /= table.sum(axis=-1, keepdims=True)
    initial /= initial.sum()
    source_id = f"markov(order={order},V={vocab_size},alpha={concentration:g},seed={rng.seed})"
    log.debug("make_markov_source %s", source_id)
    return MarkovSource(table, initial, order, source_id)


def cycle_source(vocab_size: int) -> MarkovSource:
    """Deterministic order-1 source v -> (v + 1) mod V with a uniform start token."""
    table = np.eye(vocab_size)[(np.arange(vocab_size) + 1) % vocab_size]
    initial = np.full(vocab_size, 1.0 / vocab_size)
    return MarkovSource(table, initial, 1, f"cycle(V={vocab_size})")
