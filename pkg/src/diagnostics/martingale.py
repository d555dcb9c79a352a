"""
Doob martingale differences of the combined loss and the quantities built on them.

    xi_t(x) = E[l^omega(z) | z_<=t-1 = x_<=t-1] - E[l^omega(z) | z_<=t = x_<=t]

Summing over t telescopes to E[l^omega] - l^omega(x), and each xi_t has
conditional mean zero given x_<=t-1.
"""

import logging
from dataclasses import dataclass

import numpy as np

from src.domain.model import NextTokenModel
from src.domain.source import GroundTruthSource
from src.numcore.rng import Rng

from .enumeration import Estimate, Mode, Objective, expected_loss_levels, sample_continuations

log = logging.getLogger(__name__)

AGREEMENT_TOL = 1e-9


def _check_t(t: int, length: int) -> None:
    if not 1 <= t <= length:
        raise ValueError(f"t must lie in [1, {length}], got {t}")


def xi_given_prefix(objective: Objective, source: GroundTruthSource, prefix, length: int) -> np.ndarray:
    """xi_t for every possible next token v after `prefix` (t = len(prefix) + 1), exactly."""
    levels = expected_loss_levels(objective, source, prefix, length)
    return levels[0] - levels[1]


def xi_t(objective: Objective, source: GroundTruthSource, x, t: int, mode: Mode = "exact",
         n_samples: int = 2048, rng: Rng | None = None) -> Estimate:
    """xi_t at the sequence x (1-based t)."""
    x = np.asarray(x, dtype=np.int64).reshape(-1)
    length = x.size
    _check_t(t, length)
    if mode == "exact":
        return Estimate(float(xi_given_prefix(objective, source, x[:t - 1], length)[x[t - 1]]))
    if mode != "mc":
        raise ValueError(f"mode must be 'exact' or 'mc', got {mode!r}")

    rng = rng or Rng(0)
    before = objective.sequence_loss(sample_continuations(source, x[:t - 1], length, n_samples, rng.derive("before")))
    after = objective.sequence_loss(sample_continuations(source, x[:t], length, n_samples, rng.derive("after")))
    stderr = np.sqrt(before.var(ddof=1) / n_samples + after.var(ddof=1) / n_samples)
    return Estimate(float(before.mean() - after.mean()), float(stderr), "mc")


@dataclass(frozen=True)
class MartingaleConstants:
    t: int
    c_t: float   # max |xi_t| over the sampled prefixes and every next token with D > 0
    v_t: float   # mean over sampled prefixes of E[xi_t^2 | x_<=t-1]

    def to_dict(self) -> dict:
        return {"t": self.t, "C_t": self.c_t, "V_t": self.v_t}


def martingale_constants(objective: Objective, source: GroundTruthSource, length: int,
                         n_prefixes: int = 64, rng: Rng | None = None) -> list[MartingaleConstants]:
    """Empirical C_t and V_t from exact xi_t at prefixes sampled from D.  Estimates, not certified bounds."""
    rng = rng or Rng(0)
    result = []
    for t in range(1, length + 1):
        prefixes = source.sample(n_prefixes, length, rng.derive(f"prefixes/{t}"))[:, :t - 1]
        unique, counts = np.unique(prefixes, axis=0, return_counts=True)
        c_t, second = 0.0, 0.0
        for prefix, count in zip(unique, counts):
            xi = xi_given_prefix(objective, source, prefix, length)
            d = source.true_conditional(prefix)
            support = d > 0.0
            c_t = max(c_t, float(np.abs(xi[support]).max()))
            second += count * float(np.sum(d[support] * xi[support] ** 2))
        result.append(MartingaleConstants(t, c_t, second / n_prefixes))
        log.debug("martingale t=%d C_t=%.4g V_t=%.4g prefixes=%d", t, c_t, second / n_prefixes, unique.shape[0])
    return result


def martingale_constants_mc(objective: Objective, source: GroundTruthSource, length: int,
                            n_prefixes: int = 64, n_samples: int = 512,
                            rng: Rng | None = None) -> list[MartingaleConstants]:
    """
    Over-cap substitute: C_t and V_t from MC estimates of xi_t at sequences drawn from D.

    MC noise inflates V_t, so these are upward-biased.
    """
    rng = rng or Rng(0)
    result = []
    for t in range(1, length + 1):
        seqs = source.sample(n_prefixes, length, rng.derive(f"prefixes/{t}"))
        xi = np.array([
            xi_t(objective, source, x, t, "mc", n_samples, rng.derive(f"xi/{t}/{i}")).value
            for i, x in enumerate(seqs)
        ])
        result.append(MartingaleConstants(t, float(np.abs(xi).max()), float(np.mean(xi**2))))
    return result


@dataclass(frozen=True)
class VarianceRow:
    omega: float
    second_moment: float        # mean over prefixes of E[xi_T^2 | x_<=T-1]
    reference: float            # (1 - omega)^2 * Var[(1/T) log P_theta(x_T | .)]
    single_factor: float        # the same with a single (1 - omega) factor
    ratio_to_variance: float | None
    agrees: bool

    def to_dict(self) -> dict:
        return {
            "omega": self.omega,
            "second_moment": self.second_moment,
            "reference": self.reference,
            "single_factor": self.single_factor,
            "ratio_to_variance": self.ratio_to_variance,
            "agrees": self.agrees,
        }


@dataclass(frozen=True)
class VarianceReduction:
    rows: list[VarianceRow]
    non_increasing: bool
    all_agree: bool

    def to_dict(self) -> dict:
        return {"rows": [r.to_dict() for r in self.rows],
                "non_increasing": self.non_increasing, "all_agree": self.all_agree}


def _last_position_variance(student: NextTokenModel, source: GroundTruthSource, prefix, length: int) -> float:
    """Var over x_T ~ D(. | prefix) of (1/T) log P_theta(x_T | prefix)."""
    query = np.append(np.asarray(prefix, dtype=np.int64), 0)[None, :]
    row = student.log_probs(query)[0, -1]
    d = source.true_conditional(prefix)
    f = np.where(d > 0.0, row / length, 0.0)
    mean = float(np.sum(d * f))
    return float(max(np.sum(d * (f - mean) ** 2), 0.0))


def variance_reduction_check(student: NextTokenModel, teacher: NextTokenModel | None, source: GroundTruthSource,
                             rho: float, omega_grid, prefixes, length: int) -> VarianceReduction:
    """
    E[xi_T^2 | x_<=T-1] for each omega, against (1 - omega)^2 times the conditional
    variance of the student's last-position log-likelihood.

    `prefixes` is an [n, T-1] array; values are averaged over its rows.
    """
    prefixes = np.atleast_2d(np.asarray(prefixes, dtype=np.int64))
    if prefixes.ndim != 2 or prefixes.shape[1] != length - 1:
        raise ValueError(f"prefixes must have shape [n, {length - 1}], got {prefixes.shape}")
    variance = float(np.mean([_last_position_variance(student, source, p, length) for p in prefixes]))

    rows = []
    for omega in sorted(float(w) for w in omega_grid):
        objective = Objective(student, teacher, omega, rho)
        moments = []
        for prefix in prefixes:
            xi = xi_given_prefix(objective, source, prefix, length)
            d = source.true_conditional(prefix)
            moments.append(float(np.sum(np.where(d > 0.0, d * xi**2, 0.0))))
        second = float(np.mean(moments))
        reference = (1.0 - omega) ** 2 * variance
        rows.append(VarianceRow(
            omega=omega,
            second_moment=second,
            reference=reference,
            single_factor=(1.0 - omega) * variance,
            ratio_to_variance=second / variance if variance > 0.0 else None,
            agrees=abs(second - reference) <= AGREEMENT_TOL * max(1.0, reference),
        ))
    non_increasing = all(b.second_moment <= a.second_moment + AGREEMENT_TOL for a, b in zip(rows, rows[1:]))
    return VarianceReduction(rows, non_increasing, all(r.agrees for r in rows))


def sample_variance_VN(values) -> float:
    """
    Unbiased sample variance by a single Welford pass.

    Equal to the pairwise form 1/(N(N-1)) * sum_{i<j} (f_i - f_j)^2.
    """
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size < 2:
        raise ValueError(f"sample variance needs N >= 2 values, got {values.size}")
    mean, m2 = 0.0, 0.0
    for k, f in enumerate(values, start=1):
        delta = f - mean
        mean += delta / k
        m2 += delta * (f - mean)
    return float(m2 / (values.size - 1))
