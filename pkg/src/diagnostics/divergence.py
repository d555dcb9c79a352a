"""
Div(teacher, omega): the bias distillation introduces.

    Div = omega * sum_t E_{x_<t ~ D}[ TV(teacher_rho(. | x_<t), D(. | x_<t)) ]
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from src.domain.model import NextTokenModel
from src.domain.source import GroundTruthSource
from src.lm.distributions import tv_distance
from src.losses import teacher_targets
from src.numcore.rng import Rng

from .enumeration import Mode, estimate, population

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DivergenceTerm:
    value: float
    per_position: list[float] = field(default_factory=list)   # E[TV] at each t, before the omega factor
    stderr: float = 0.0
    mode: str = "exact"

    @property
    def tv_sum(self) -> float:
        return float(sum(self.per_position))

    def to_dict(self) -> dict:
        return {"value": self.value, "per_position_tv": self.per_position, "stderr": self.stderr, "mode": self.mode}


def expected_tv(teacher: NextTokenModel, source: GroundTruthSource, rho: float, length: int,
                mode: Mode = "exact", n_samples: int = 4096, rng: Rng | None = None) -> tuple[np.ndarray, float]:
    """Per-position E[TV] and the standard error of their sum (0 in exact mode)."""
    seqs, weights = population(source, length, mode, n_samples, rng)
    tv = tv_distance(teacher_targets(teacher.log_probs(seqs), rho), source.conditional_table(seqs))
    per_position = weights @ tv
    total = estimate(tv.sum(axis=-1), weights, mode)
    return per_position, total.stderr


def div_term(teacher: NextTokenModel | None, source: GroundTruthSource, omega: float, rho: float, length: int,
             mode: Mode = "exact", n_samples: int = 4096, rng: Rng | None = None) -> DivergenceTerm:
    if not 0.0 <= omega <= 1.0:
        raise ValueError(f"omega must lie in [0, 1], got {omega}")
    if omega == 0.0:
        return DivergenceTerm(0.0, [0.0] * length, 0.0, mode)
    if teacher is None:
        raise ValueError("omega > 0 needs a teacher")
    per_position, stderr = expected_tv(teacher, source, rho, length, mode, n_samples, rng)
    value = omega * float(per_position.sum())
    log.debug("div_term omega=%.4f rho=%.4f mode=%s value=%.6g", omega, rho, mode, value)
    return DivergenceTerm(value, [float(v) for v in per_position], omega * stderr, mode)
