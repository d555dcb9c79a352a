"""
Per-step schedules: the distillation weight omega_j and the learning rate.

Steps are 1-based: step j is the j-th optimizer update, 1 <= j <= n_steps.
"""

import math

from src.domain.training import TrainPlan


def _check_step(plan: TrainPlan, j: int) -> None:
    if not 1 <= j <= plan.n_steps:
        raise ValueError(f"step must lie in [1, {plan.n_steps}], got {j}")


def omega_at_step(plan: TrainPlan, j: int) -> float:
    """
    Effective distillation weight at step j.

    baseline: 0 throughout.  rkd: omega throughout.  salt, by transition:
      step                omega for j <= n_kd, then 0
      linear_decay        omega up to n1, linearly to 0 at n2
      linear_ratio_decay  the ratio omega_j / (1 - omega_j) decays linearly
                          from omega / (1 - omega) at n1 to 0 at n2
    """
    _check_step(plan, j)
    omega = plan.omega
    if plan.mode == "baseline" or omega == 0.0:
        return 0.0
    if plan.mode == "rkd":
        return omega

    t = plan.transition
    if t.kind == "step":
        return omega if j <= plan.n_kd else 0.0
    if j <= t.n1:
        return omega
    if j >= t.n2:
        return 0.0
    frac = (t.n2 - j) / (t.n2 - t.n1)
    if t.kind == "linear_decay":
        return omega * frac
    if omega == 1.0:
        raise ValueError("linear_ratio_decay is undefined for omega = 1")
    r = omega / (1.0 - omega) * frac
    return r / (1.0 + r)


def lr_at_step(plan: TrainPlan, j: int) -> float:
    """Linear warmup 0 -> peak over warmup_steps, then cosine from peak to final at step n_steps."""
    _check_step(plan, j)
    lr = plan.lr
    if j <= lr.warmup_steps:
        return lr.peak * j / lr.warmup_steps
    span = plan.n_steps - lr.warmup_steps
    progress = (j - lr.warmup_steps) / span
    return lr.final + (lr.peak - lr.final) * 0.5 * (1.0 + math.cos(math.pi * progress))
