"""
Finite-difference validation of backward().

The closure receives a fresh tape plus one parameter Var per named array and
must return a scalar Var.  Components whose analytic and numeric magnitudes are
both below atol/tol are judged on absolute error (|a - n| < atol), everything
else on relative error.
"""

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from src.numcore.rng import Rng
from src.numcore.tape import Tape, Var, backward
from src.numcore.tensor import NonFiniteError

log = logging.getLogger(__name__)

LossClosure = Callable[[Tape, dict[str, Var]], Var]


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    n_checked: int
    worst: tuple[str, tuple[int, ...]] | None = None
    error: str | None = None


def _evaluate(f: LossClosure, params: dict[str, np.ndarray]) -> tuple[Tape, Var]:
    tape = Tape()
    variables = {name: tape.param(name, value) for name, value in params.items()}
    return tape, f(tape, variables)


def grad_check(
    f: LossClosure,
    params: dict[str, np.ndarray],
    h: float = 1e-5,
    tol: float = 1e-5,
    atol: float = 1e-8,
    max_components: int | None = None,
    rng: Rng | None = None,
) -> GradCheckReport:
    """
    Compare backward() against central differences (f(p+h) - f(p-h)) / 2h.

    max_components caps the number of probed entries per parameter; the probed
    entries are then drawn from `rng` (default Rng(0)) without replacement.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"finite-difference step h must lie in [1e-7, 1e-3], got {h}")
    params = {name: np.array(value, dtype=np.float64) for name, value in params.items()}
    try:
        tape, loss = _evaluate(f, params)
        analytic = backward(tape, loss)
    except NonFiniteError as exc:
        return GradCheckReport(float("inf"), False, 0, error=str(exc))

    pick = (rng or Rng(0)).generator()
    floor = atol / tol
    worst_err, worst_at, checked = 0.0, None, 0
    for name, value in params.items():
        flat_count = value.size
        positions = np.arange(flat_count)
        if max_components is not None and flat_count > max_components:
            positions = np.sort(pick.choice(flat_count, size=max_components, replace=False))
        for flat in positions:
            idx = np.unravel_index(int(flat), value.shape)
            original = value[idx]
            try:
                value[idx] = original + h
                up = float(_evaluate(f, params)[1].value)
                value[idx] = original - h
                down = float(_evaluate(f, params)[1].value)
            except NonFiniteError as exc:
                return GradCheckReport(float("inf"), False, checked, (name, idx), error=str(exc))
            finally:
                value[idx] = original
            numeric = (up - down) / (2.0 * h)
            a = float(analytic[name][idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            checked += 1
            if err > worst_err:
                worst_err, worst_at = err, (name, tuple(int(i) for i in idx))

    passed = worst_err < tol
    log.debug("grad_check checked=%d max_rel_err=%.3g passed=%s", checked, worst_err, passed)
    return GradCheckReport(worst_err, passed, checked, worst_at)
