"""
Exact expectations over the ground-truth source by enumeration, with a
Monte-Carlo counterpart for sizes past the cap.

Everything here works on whole sequences: a [n, T] batch of token ids plus a
weight per sequence.  In exact mode the batch is every sequence in V^T and the
weights are D(x); in MC mode the batch is n draws from D and the weights are 1/n.
"""

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np

from src.domain.errors import CapacityError
from src.domain.model import NextTokenModel
from src.domain.source import GroundTruthSource
from src.lm.distributions import cross_entropy
from src.losses import teacher_targets
from src.numcore.rng import Rng

log = logging.getLogger(__name__)

ENUMERATION_CAP = 2**20

Mode = Literal["exact", "mc"]


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float = 0.0
    mode: str = "exact"

    def to_dict(self) -> dict:
        return {"value": self.value, "stderr": self.stderr, "mode": self.mode}


def check_cap(vocab_size: int, length: int, what: str = "exact enumeration") -> None:
    count = vocab_size**length
    if count > ENUMERATION_CAP:
        raise CapacityError(f"{what}: V^{length} = {count} sequences exceeds the cap of {ENUMERATION_CAP}")


def all_sequences(vocab_size: int, length: int) -> np.ndarray:
    """Every sequence in V^length, lexicographic (first position most significant)."""
    if length == 0:
        return np.zeros((1, 0), dtype=np.int64)
    grid = np.indices((vocab_size,) * length).reshape(length, -1).T
    return np.ascontiguousarray(grid, dtype=np.int64)


def population(source: GroundTruthSource, length: int, mode: Mode = "exact",
               n_samples: int = 4096, rng: Rng | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(sequences, weights) representing D over V^length."""
    if mode == "exact":
        check_cap(source.vocab_size, length)
        seqs = all_sequences(source.vocab_size, length)
        return seqs, source.sequence_probability(seqs)
    if mode == "mc":
        seqs = source.sample(n_samples, length, rng or Rng(0))
        return seqs, np.full(n_samples, 1.0 / n_samples)
    raise ValueError(f"mode must be 'exact' or 'mc', got {mode!r}")


def estimate(values: np.ndarray, weights: np.ndarray, mode: Mode) -> Estimate:
    """Weighted mean; MC mode also reports the standard error of the mean."""
    values = np.asarray(values, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        value = float(np.sum(np.where(weights > 0.0, weights * values, 0.0)))
    if mode == "exact":
        return Estimate(value, 0.0, "exact")
    n = values.size
    stderr = float(np.std(values, ddof=1) / np.sqrt(n)) if n > 1 else float("inf")
    return Estimate(value, stderr, "mc")


def sample_continuations(source: GroundTruthSource, prefix, length: int, n: int, rng: Rng) -> np.ndarray:
    """n sequences of `length` tokens that start with `prefix`, the rest drawn from D."""
    prefix = np.asarray(prefix, dtype=np.int64).reshape(-1)
    seqs = np.zeros((n, length), dtype=np.int64)
    seqs[:, :prefix.size] = prefix
    uniforms = rng.generator().random((n, length))
    for t in range(prefix.size, length):
        rows = source.conditional_table(seqs[:, :t + 1])[:, t]
        cdf = np.cumsum(rows, axis=-1)
        seqs[:, t] = np.minimum((cdf <= uniforms[:, t:t + 1]).sum(axis=-1), source.vocab_size - 1)
    return seqs


@dataclass(frozen=True)
class Objective:
    """
    The combined per-sequence loss l^omega(x; theta) for a given student and teacher.

    Per-position terms are already divided by T, so summing over positions
    gives the per-sequence loss.
    """

    student: NextTokenModel
    teacher: NextTokenModel | None = None
    omega: float = 0.0
    rho: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError(f"omega must lie in [0, 1], got {self.omega}")
        if self.omega > 0.0 and self.teacher is None:
            raise ValueError("omega > 0 needs a teacher")

    def with_omega(self, omega: float) -> "Objective":
        return Objective(self.student, self.teacher, omega, self.rho)

    def teacher_scaled(self, seqs: np.ndarray) -> np.ndarray:
        return teacher_targets(self.teacher.log_probs(seqs), self.rho)

    def per_position(self, seqs: np.ndarray) -> np.ndarray:
        """[n, T] realised per-position losses of l^omega."""
        lp = self.student.log_probs(seqs)
        length = seqs.shape[1]
        std = -np.take_along_axis(lp, seqs[..., None], axis=-1)[..., 0]
        if self.omega == 0.0:
            return std / length
        kd = cross_entropy(self.teacher_scaled(seqs), lp)
        return ((1.0 - self.omega) * std + self.omega * kd) / length

    def expected_per_position(self, seqs: np.ndarray, truth: np.ndarray) -> np.ndarray:
        """[n, T] per-position losses with x_t averaged out under D(. | x_<t) = truth."""
        lp = self.student.log_probs(seqs)
        length = seqs.shape[1]
        std = cross_entropy(truth, lp)
        if self.omega == 0.0:
            return std / length
        kd = cross_entropy(self.teacher_scaled(seqs), lp)
        return ((1.0 - self.omega) * std + self.omega * kd) / length

    def sequence_loss(self, seqs: np.ndarray) -> np.ndarray:
        return self.per_position(seqs).sum(axis=-1)


def expected_loss_levels(objective: Objective, source: GroundTruthSource, prefix, length: int) -> list[np.ndarray]:
    """
    Conditional expectations of l^omega below a fixed prefix of length L.

    levels[j] has shape (V,) * j and holds E[l^omega | prefix, z_1..z_j] for
    every continuation z of length j, so levels[0] is E[l^omega | prefix] and
    levels[length - L] is the realised loss of each full sequence.
    """
    prefix = np.asarray(prefix, dtype=np.int64).reshape(-1)
    vocab = source.vocab_size
    m = length - prefix.size
    if m < 0:
        raise ValueError(f"prefix of length {prefix.size} is longer than the sequence length {length}")
    check_cap(vocab, m, "suffix enumeration")

    suffixes = all_sequences(vocab, m)
    seqs = np.concatenate([np.broadcast_to(prefix, (suffixes.shape[0], prefix.size)), suffixes], axis=1)
    loss = objective.sequence_loss(seqs)
    cond = source.conditional_table(seqs).reshape((vocab,) * m + (length, vocab))

    levels: list[np.ndarray] = [np.empty(0)] * (m + 1)
    levels[m] = loss.reshape((vocab,) * m)
    for j in range(m - 1, -1, -1):
        rows = cond[(slice(None),) * j + (0,) * (m - j) + (prefix.size + j,)]
        with np.errstate(invalid="ignore"):
            levels[j] = np.where(rows > 0.0, rows * levels[j + 1], 0.0).sum(axis=-1)
    return levels
