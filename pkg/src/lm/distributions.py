"""
Probability-vector helpers shared by losses, selection and diagnostics.

A distribution is a float64 array whose last axis has length V and sums to 1;
every helper here works row-wise on arrays of any leading shape.
"""

import numpy as np

MAX_FLOOR = 0.01
NORMALIZATION_TOL = 1e-9


def logsumexp(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    return m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def check_distribution(d: np.ndarray, what: str = "distribution") -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if d.ndim == 0 or d.shape[-1] < 1:
        raise ValueError(f"{what}: expected a length-V probability vector, got shape {d.shape}")
    if not np.all(np.isfinite(d)) or np.any(d < 0):
        raise ValueError(f"{what}: entries must be finite and non-negative")
    total = d.sum(axis=-1)
    if np.any(np.abs(total - 1.0) > NORMALIZATION_TOL):
        raise ValueError(f"{what}: rows must sum to 1 within {NORMALIZATION_TOL}, worst sum {total.flat[np.argmax(np.abs(total - 1.0))]}")
    return d


def apply_floor(d: np.ndarray, eps: float) -> np.ndarray:
    """(1 - eps) * d + eps * Uniform(V); every entry is then at least eps / V."""
    if not 0.0 <= eps <= MAX_FLOOR:
        raise ValueError(f"probability floor must lie in [0, {MAX_FLOOR}], got {eps}")
    d = np.asarray(d, dtype=np.float64)
    if eps == 0.0:
        return d.copy()
    return (1.0 - eps) * d + eps / d.shape[-1]


def floor_log_probs(log_probs: np.ndarray, eps: float) -> np.ndarray:
    """apply_floor in log space; exact identity when eps == 0."""
    if eps == 0.0:
        return np.array(log_probs, dtype=np.float64)
    return np.log(apply_floor(np.exp(log_probs), eps))


def max_token_loss(vocab_size: int, eps: float) -> float:
    """M = log(V / eps): the largest -log p a floored distribution can produce."""
    if eps <= 0.0:
        raise ValueError("the per-token loss is unbounded without a positive floor")
    return float(np.log(vocab_size / eps))


def log_temperature_scale(log_probs: np.ndarray, rho: float) -> np.ndarray:
    """Log of P^rho / sum(P^rho), computed entirely in log space."""
    if rho <= 0.0:
        raise ValueError(f"temperature exponent rho must be positive, got {rho}")
    z = rho * np.asarray(log_probs, dtype=np.float64)
    return z - logsumexp(z)


def temperature_scale(d: np.ndarray, rho: float) -> np.ndarray:
    """P_rho(v) proportional to P(v)^rho.  `d` must be strictly positive (floor it first)."""
    if rho <= 0.0:
        raise ValueError(f"temperature exponent rho must be positive, got {rho}")
    d = np.asarray(d, dtype=np.float64)
    if np.any(d <= 0.0):
        raise ValueError("temperature_scale needs strictly positive probabilities; apply a floor first")
    return np.exp(log_temperature_scale(np.log(d), rho))


def tv_distance(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Total variation 0.5 * sum |p - q| along the last axis."""
    return 0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum(axis=-1)


def cross_entropy(p: np.ndarray, log_q: np.ndarray) -> np.ndarray:
    """CE(p, q) = -sum p log q along the last axis (0 * log 0 counts as 0)."""
    p = np.asarray(p, dtype=np.float64)
    return -np.where(p > 0.0, p * log_q, 0.0).sum(axis=-1)


def top_k_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Ids of the k largest entries per row, ties broken by the smaller id."""
    v = scores.shape[-1]
    if not 1 <= k <= v:
        raise ValueError(f"k must lie in [1, {v}], got {k}")
    return np.argsort(-scores, axis=-1, kind="stable")[..., :k]


def in_top_k(scores: np.ndarray, token: np.ndarray, k: int) -> np.ndarray:
    """True where `token` ranks among the top k of its row (smaller id wins ties)."""
    v = scores.shape[-1]
    if not 1 <= k <= v:
        raise ValueError(f"k must lie in [1, {v}], got {k}")
    token = np.asarray(token)
    own = np.take_along_axis(scores, token[..., None], axis=-1)
    ids = np.arange(v)
    ahead = (scores > own) | ((scores == own) & (ids < token[..., None]))
    return ahead.sum(axis=-1) < k
