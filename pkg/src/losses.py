"""
Training objectives: next-token cross-entropy, token-level distillation with a
temperature-scaled teacher, their omega-weighted combination, top-k distillation,
and the one-hot/teacher mixture target the combination is equivalent to.

Numeric functions take per-sequence [T, V] arrays.  The *_graph functions record
the same quantities on a numcore tape for a [B, T, V] batch; teacher targets are
constants there, so gradients reach the student only.
"""

from dataclasses import dataclass

import numpy as np

from src.lm.distributions import (
    apply_floor,
    cross_entropy,
    log_temperature_scale,
    logsumexp,
    temperature_scale,
    top_k_indices,
)
from src.numcore import tape as nc
from src.numcore.tape import Var

# Floor put under raw teacher probabilities before the rho-power.
TEACHER_FLOOR = 1e-12


@dataclass
class LossBreakdown:
    standard: float
    distill: float
    combined: float
    per_token_standard: np.ndarray
    per_token_distill: np.ndarray


def _check_omega(omega: float) -> None:
    if not 0.0 <= omega <= 1.0:
        raise ValueError(f"distillation weight omega must lie in [0, 1], got {omega}")


def _check_shapes(student_logprobs: np.ndarray, x=None, teacher=None) -> np.ndarray:
    lp = np.asarray(student_logprobs, dtype=np.float64)
    if lp.ndim != 2:
        raise ValueError(f"student log-probs must be [T, V], got shape {lp.shape}")
    if x is not None and np.shape(x) != lp.shape[:1]:
        raise ValueError(f"tokens of shape {np.shape(x)} do not match log-probs {lp.shape}")
    if teacher is not None and np.shape(teacher) != lp.shape:
        raise ValueError(f"teacher distributions {np.shape(teacher)} do not match log-probs {lp.shape}")
    return lp


def per_token_ce(student_logprobs: np.ndarray, x) -> np.ndarray:
    lp = _check_shapes(student_logprobs, x)
    return -lp[np.arange(lp.shape[0]), np.asarray(x)]


def per_token_kd(teacher_dists: np.ndarray, student_logprobs: np.ndarray, rho: float) -> np.ndarray:
    lp = _check_shapes(student_logprobs, teacher=teacher_dists)
    return cross_entropy(temperature_scale(teacher_dists, rho), lp)


def ce_loss(student_logprobs: np.ndarray, x) -> float:
    """(1/T) sum_t -log P(x_t | x_<t)."""
    return float(per_token_ce(student_logprobs, x).mean())


def kd_loss(teacher_dists: np.ndarray, student_logprobs: np.ndarray, rho: float) -> float:
    """(1/T) sum_t CE(teacher_t^rho normalised, student_t).  Teacher rows must be strictly positive."""
    return float(per_token_kd(teacher_dists, student_logprobs, rho).mean())


def combined_loss(x, student_logprobs, teacher_dists, omega: float, rho: float) -> LossBreakdown:
    """(1 - omega) * ce_loss + omega * kd_loss, with the per-token terms kept."""
    _check_omega(omega)
    std = per_token_ce(student_logprobs, x)
    dist = per_token_kd(teacher_dists, student_logprobs, rho)
    standard, distill = float(std.mean()), float(dist.mean())
    return LossBreakdown(
        standard=standard,
        distill=distill,
        combined=(1.0 - omega) * standard + omega * distill,
        per_token_standard=std,
        per_token_distill=dist,
    )


def mixture_dist(x_t: int, teacher_scaled: np.ndarray, omega: float) -> np.ndarray:
    """(1 - omega) * onehot(x_t) + omega * teacher_scaled."""
    _check_omega(omega)
    target = omega * np.asarray(teacher_scaled, dtype=np.float64)
    target[..., x_t] += 1.0 - omega
    return target


def topk_kd_loss(teacher_dists: np.ndarray, student_logprobs: np.ndarray, k: int) -> float:
    """
    Distillation restricted to the teacher's top-k tokens per position.

    Teacher and student are both renormalised over that set; the per-position
    cross-entropies are averaged over T so the value shares ce_loss's scale.
    """
    lp = _check_shapes(student_logprobs, teacher=teacher_dists)
    teacher = np.asarray(teacher_dists, dtype=np.float64)
    idx = top_k_indices(teacher, k)
    t_sub = np.take_along_axis(teacher, idx, axis=-1)
    t_sub = t_sub / t_sub.sum(axis=-1, keepdims=True)
    s_sub = np.take_along_axis(lp, idx, axis=-1)
    s_sub = s_sub - logsumexp(s_sub)
    return float(cross_entropy(t_sub, s_sub).mean())


def teacher_targets(teacher_log_probs: np.ndarray, rho: float, floor: float = TEACHER_FLOOR) -> np.ndarray:
    """Floored, temperature-scaled teacher distributions used as distillation targets."""
    floored = np.log(apply_floor(np.exp(teacher_log_probs), floor))
    return np.exp(log_temperature_scale(floored, rho))


# -- tape versions ---------------------------------------------------------------


def ce_graph(logp: Var, tokens: np.ndarray) -> Var:
    """Per-token -log P(x_t | x_<t) as a [B, T] Var."""
    return -nc.gather_logp(logp, tokens)


def kd_graph(logp: Var, targets: np.ndarray) -> Var:
    """Per-token CE(targets, student) as a [B, T] Var; targets are constants."""
    vocab = logp.shape[-1]
    return nc.reduce_mean(logp * logp.tape.constant(targets), axis=-1) * (-float(vocab))


def topk_kd_graph(logp: Var, targets: np.ndarray, k: int) -> Var:
    idx = top_k_indices(targets, k)
    t_sub = np.take_along_axis(targets, idx, axis=-1)
    t_sub = t_sub / t_sub.sum(axis=-1, keepdims=True)
    s_sub = nc.row_log_softmax(nc.gather_logp(logp, idx))
    return nc.reduce_mean(s_sub * logp.tape.constant(t_sub), axis=-1) * (-float(k))


def combined_graph(
    logp: Var,
    tokens: np.ndarray,
    targets: np.ndarray | None,
    omega: float,
    top_k: int | None = None,
) -> tuple[Var, Var, Var | None]:
    """
    Batch objective (1/B) sum_x l^omega(x) as a scalar Var.

    Returns (loss, per-token standard, per-token distill).  With omega == 0 the
    teacher term is not built at all and `targets` may be None.
    """
    _check_omega(omega)
    std = ce_graph(logp, tokens)
    if omega == 0.0:
        return nc.reduce_mean(std), std, None
    if targets is None:
        raise ValueError("omega > 0 needs teacher targets")
    dist = topk_kd_graph(logp, targets, top_k) if top_k else kd_graph(logp, targets)
    combined = std * (1.0 - omega) + dist * omega
    return nc.reduce_mean(combined), std, dist
