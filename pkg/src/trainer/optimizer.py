"""
Adam with bias correction and optional global-norm gradient clipping.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from src.domain.training import AdamSettings

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class StepOutcome:
    skipped: bool
    grad_norm: float
    clip_scale: float = 1.0


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def optimizer_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    settings: AdamSettings = AdamSettings(),
) -> StepOutcome:
    """
    Update `params` in place.

    A step whose gradients contain NaN/Inf is skipped entirely: parameters and
    moment estimates stay as they were and the bias-correction counter does
    not advance.
    """
    for name, g in grads.items():
        if name not in params:
            raise ValueError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")

    norm = global_norm(grads)
    if not np.isfinite(norm):
        log.warning("optimizer step=%d skipped: non-finite gradient", state.step + 1)
        return StepOutcome(skipped=True, grad_norm=norm)

    scale = 1.0
    if settings.clip_norm is not None and norm > settings.clip_norm:
        scale = settings.clip_norm / norm

    state.step += 1
    b1, b2 = settings.beta1, settings.beta2
    correction1 = 1.0 - b1**state.step
    correction2 = 1.0 - b2**state.step
    for name in sorted(grads):
        g = grads[name] * scale
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        params[name] -= lr * (m / correction1) / (np.sqrt(v / correction2) + settings.eps)
    return StepOutcome(skipped=False, grad_norm=norm, clip_scale=scale)
