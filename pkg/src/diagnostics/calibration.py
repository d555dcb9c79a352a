"""
Calibration of cross-entropy against greedy 0/1 next-token error.

    g(eps) = 1/2 * ((1 - eps) log(1 - eps) + (1 + eps) log(1 + eps)),  eps in [0, 1]

g is increasing with g(0) = 0 and g(1) = log 2, and an excess cross-entropy of
y bounds the excess 0/1 risk by g^-1(y).
"""

import math

import numpy as np

from src.domain.model import NextTokenModel
from src.domain.source import GroundTruthSource
from src.numcore.rng import Rng

from .enumeration import Estimate, Mode, estimate, population

G_MAX = math.log(2.0)
BISECTION_TOL = 1e-10


def _xlogx(x: float) -> float:
    return 0.0 if x == 0.0 else x * math.log(x)


def calibration_g(eps: float) -> float:
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"calibration_g is defined on [0, 1], got {eps}")
    return 0.5 * (_xlogx(1.0 - eps) + _xlogx(1.0 + eps))


def calibration_g_inv(y: float) -> float:
    """The eps in [0, 1) with g(eps) = y, by bisection to 1e-10."""
    if not 0.0 <= y < G_MAX:
        raise ValueError(f"calibration_g_inv needs y in [0, log 2), got {y}")
    lo, hi = 0.0, 1.0
    while hi - lo > BISECTION_TOL:
        mid = 0.5 * (lo + hi)
        if calibration_g(mid) < y:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def excess01_bound(excess_ce: float) -> float:
    """Bound on excess 0/1 risk from excess cross-entropy; 1 once the excess reaches log 2."""
    if excess_ce >= G_MAX:
        return 1.0
    return calibration_g_inv(max(excess_ce, 0.0))


def zero_one_risk(student: NextTokenModel, source: GroundTruthSource, length: int, mode: Mode = "exact",
                  n_samples: int = 4096, rng: Rng | None = None) -> Estimate:
    """
    Per-token greedy error rate (1/T) sum_t E_{x_<t}[1 - D(greedy_t | x_<t)].

    The inner expectation over x_t is always exact; only the prefixes are sampled in MC mode.
    """
    seqs, weights = population(source, length, mode, n_samples, rng)
    greedy = student.greedy(seqs)
    hit = np.take_along_axis(source.conditional_table(seqs), greedy[..., None], axis=-1)[..., 0]
    return estimate((1.0 - hit).mean(axis=-1), weights, mode)
