"""
Population risks and the generalization-bound quantities built from them.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from src.domain.model import NextTokenModel
from src.domain.source import GroundTruthSource
from src.lm.distributions import tv_distance
from src.numcore.rng import Rng

from .enumeration import Estimate, Mode, Objective, estimate, population
from .martingale import sample_variance_VN

log = logging.getLogger(__name__)

GAP_SLACK = 1e-9


def population_risk(objective: Objective, source: GroundTruthSource, length: int, mode: Mode = "exact",
                    n_samples: int = 4096, rng: Rng | None = None) -> Estimate:
    """
    R^omega(theta) = E_{x ~ D}[l^omega(x)], with each realised token replaced by its
    expectation under D(. | x_<t) (same value, lower variance in MC mode).
    """
    seqs, weights = population(source, length, mode, n_samples, rng)
    per_seq = objective.expected_per_position(seqs, source.conditional_table(seqs)).sum(axis=-1)
    return estimate(per_seq, weights, mode)


@dataclass(frozen=True)
class RiskGap:
    lhs: float
    rhs: float
    risk: float
    risk_omega: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs + GAP_SLACK

    def to_dict(self) -> dict:
        return {"lhs": self.lhs, "rhs": self.rhs, "risk": self.risk, "risk_omega": self.risk_omega,
                "holds": self.holds}


def risk_gap_check(student: NextTokenModel, teacher: NextTokenModel | None, source: GroundTruthSource,
                   omega: float, rho: float, max_loss: float, length: int, mode: Mode = "exact",
                   n_samples: int = 4096, rng: Rng | None = None) -> RiskGap:
    """
    |R(theta) - R^omega(theta)| against (4 M omega / T) * sum_t E[TV(teacher_rho, D)],
    both sides by exact enumeration (mode="mc" is the over-cap substitute).  The
    student must be floored so no per-token loss exceeds M = max_loss.
    """
    seqs, weights = population(source, length, mode, n_samples, rng)
    worst = float(-student.log_probs(seqs).min())
    if worst > max_loss * (1.0 + 1e-12):
        raise ValueError(f"student per-token loss reaches {worst:.6g} > M = {max_loss:.6g}; floor the student")

    truth = source.conditional_table(seqs)
    risk = estimate(Objective(student).expected_per_position(seqs, truth).sum(axis=-1), weights, mode).value
    objective = Objective(student, teacher, omega, rho)
    risk_omega = estimate(objective.expected_per_position(seqs, truth).sum(axis=-1), weights, mode).value
    if omega == 0.0:
        rhs = 0.0
    else:
        tv = tv_distance(objective.teacher_scaled(seqs), truth)
        rhs = 4.0 * max_loss * omega / length * float((weights @ tv).sum())
    gap = RiskGap(abs(risk - risk_omega), rhs, risk, risk_omega)
    log.debug("risk_gap omega=%.4f lhs=%.6g rhs=%.6g holds=%s", omega, gap.lhs, gap.rhs, gap.holds)
    return gap


@dataclass(frozen=True)
class RiskBound:
    value: float
    empirical: float
    variance_term: float
    range_term: float
    divergence_term: float

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "empirical_risk": self.empirical,
            "variance_term": self.variance_term,
            "range_term": self.range_term,
            "divergence_term": self.divergence_term,
        }


def risk_bound(r_n_omega: float, v_t, c: float, m: float, omega: float, div_term: float,
                   n: int, log_card: float, delta: float, length: int) -> RiskBound:
    """
    R_N^omega + sqrt(2 (sum_t V_t) / N * log(|Theta|/delta))
              + (2C / 3N) * log(|Theta|/delta)
              + (4M / T) * div_term

    where div_term = omega * sum_t E[TV] and log_card = log |Theta| is a proxy
    supplied by the caller.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if n < 1 or length < 1:
        raise ValueError(f"need N >= 1 and T >= 1, got N={n} T={length}")
    inputs = [r_n_omega, c, m, omega, div_term, log_card, *v_t]
    if not all(math.isfinite(float(v)) for v in inputs):
        raise ValueError("risk_bound inputs must be finite")
    log_term = log_card - math.log(delta)
    variance_term = math.sqrt(max(2.0 * float(np.sum(v_t)) / n * log_term, 0.0))
    range_term = 2.0 * c / (3.0 * n) * log_term
    divergence_term = 0.0 if omega == 0.0 else 4.0 * m * div_term / length
    value = r_n_omega + variance_term + range_term + divergence_term
    return RiskBound(value, r_n_omega, variance_term, range_term, divergence_term)


def variance_bound_block(per_sequence_losses) -> dict:
    """Sample-variance part of the data-dependent bound; the growth-function term stays symbolic."""
    values = np.asarray(per_sequence_losses, dtype=np.float64)
    return {
        "N": int(values.size),
        "empirical_risk": float(values.mean()),
        "V_N": sample_variance_VN(values),
        "growth_term": "M(N)",
        "constants": ["c1", "c2"],
    }
