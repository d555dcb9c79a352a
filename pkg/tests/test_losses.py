"""
Loss functions and probability-vector helpers: worked examples and identities.
"""

import math

import numpy as np
import pytest

from src.lm.distributions import (
    apply_floor,
    check_distribution,
    cross_entropy,
    floor_log_probs,
    in_top_k,
    max_token_loss,
    temperature_scale,
    top_k_indices,
    tv_distance,
)
from src.losses import (
    ce_loss,
    combined_graph,
    combined_loss,
    kd_loss,
    mixture_dist,
    per_token_ce,
    teacher_targets,
    topk_kd_loss,
)
from src.numcore.tape import Tape


def _random_rows(seed, t, v):
    return np.random.default_rng(seed).dirichlet(np.ones(v), size=t)


# -- distributions -------------------------------------------------------------


def test_temperature_scale_example():
    np.testing.assert_allclose(temperature_scale(np.array([0.8, 0.2]), 0.5), [2 / 3, 1 / 3], atol=1e-12)


def test_temperature_scale_rho_one_is_identity():
    p = _random_rows(0, 4, 6)
    np.testing.assert_allclose(temperature_scale(p, 1.0), p, atol=1e-12)


@pytest.mark.parametrize("rho", [0.1, 0.25, 0.5, 2.0, 5.0])
def test_temperature_scale_keeps_argmax(rho):
    p = _random_rows(1, 50, 7)
    np.testing.assert_array_equal(np.argmax(temperature_scale(p, rho), axis=-1), np.argmax(p, axis=-1))


def test_temperature_scale_rejects_non_positive_rho_and_zeros():
    with pytest.raises(ValueError):
        temperature_scale(np.array([0.5, 0.5]), 0.0)
    with pytest.raises(ValueError):
        temperature_scale(np.array([1.0, 0.0]), 0.5)


def test_apply_floor_bounds_every_entry():
    d = apply_floor(np.array([1.0, 0.0, 0.0, 0.0]), 1e-3)
    assert d.min() == pytest.approx(1e-3 / 4)
    assert d.sum() == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        apply_floor(d, 0.02)


def test_max_token_loss_bounds_floored_losses():
    eps, v = 1e-4, 5
    floored = floor_log_probs(np.log(np.array([1.0, 1e-300, 1e-300, 1e-300, 1e-300])), eps)
    assert -floored.min() <= max_token_loss(v, eps) + 1e-12
    with pytest.raises(ValueError):
        max_token_loss(v, 0.0)


def test_tv_distance_examples():
    assert tv_distance(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(1.0)
    assert tv_distance(np.array([0.5, 0.5]), np.array([0.5, 0.5])) == 0.0


def test_check_distribution_rejects_unnormalised_rows():
    with pytest.raises(ValueError):
        check_distribution(np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        check_distribution(np.array([1.2, -0.2]))


def test_top_k_breaks_ties_by_smaller_id():
    scores = np.array([0.2, 0.4, 0.2, 0.2])
    np.testing.assert_array_equal(top_k_indices(scores, 2), [1, 0])
    assert bool(in_top_k(scores, np.array(0), 2))
    assert not bool(in_top_k(scores, np.array(2), 2))


# -- ce / kd -------------------------------------------------------------------


def test_ce_uniform_rows_give_log_v():
    logp = np.full((5, 7), -math.log(7))
    assert ce_loss(logp, [0, 1, 2, 3, 6]) == pytest.approx(math.log(7), abs=1e-12)


def test_ce_onehot_rows_give_zero():
    x = np.array([2, 0, 1])
    logp = np.where(np.eye(3)[x] > 0, 0.0, -np.inf)
    assert ce_loss(logp, x) == 0.0


def test_ce_scalar_example():
    assert ce_loss(np.log([[0.25, 0.75]]), [0]) == pytest.approx(math.log(4), abs=1e-12)


def test_ce_shape_mismatch_is_rejected():
    with pytest.raises(ValueError):
        ce_loss(np.zeros((3, 4)), [0, 1])


def test_kd_against_itself_is_the_entropy():
    p = _random_rows(2, 6, 5)
    entropy = float(-(p * np.log(p)).sum(axis=-1).mean())
    assert kd_loss(p, np.log(p), 1.0) == pytest.approx(entropy, abs=1e-12)


def test_kd_example():
    assert kd_loss(np.array([[0.7, 0.3]]), np.log([[0.5, 0.5]]), 1.0) == pytest.approx(math.log(2), abs=1e-12)


def test_kd_uses_the_scaled_teacher():
    student = np.log([[0.1, 0.9]])
    expected = -(2 / 3) * math.log(0.1) - (1 / 3) * math.log(0.9)
    assert kd_loss(np.array([[0.8, 0.2]]), student, 0.5) == pytest.approx(expected, abs=1e-12)


def test_kd_rejects_non_positive_rho():
    with pytest.raises(ValueError):
        kd_loss(np.array([[0.5, 0.5]]), np.log([[0.5, 0.5]]), 0.0)


def test_gibbs_inequality_on_random_pairs():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        v = int(rng.integers(2, 10))
        p = rng.dirichlet(np.ones(v), size=1)
        q = rng.dirichlet(np.ones(v), size=1)
        assert kd_loss(p, np.log(q), 1.0) >= kd_loss(p, np.log(p), 1.0) - 1e-12


# -- combined ------------------------------------------------------------------


def test_combined_reduces_to_ce_and_kd():
    x = np.array([1, 0, 3])
    student = np.log(_random_rows(4, 3, 4))
    teacher = _random_rows(5, 3, 4)
    assert combined_loss(x, student, teacher, 0.0, 0.5).combined == ce_loss(student, x)
    assert combined_loss(x, student, teacher, 1.0, 0.5).combined == kd_loss(teacher, student, 0.5)


def test_combined_is_affine_in_omega():
    x = np.array([2, 2, 0, 1])
    student = np.log(_random_rows(6, 4, 3))
    teacher = _random_rows(7, 4, 3)
    at = {w: combined_loss(x, student, teacher, w, 0.25).combined for w in (0.0, 0.5, 1.0)}
    assert at[0.5] == pytest.approx(0.5 * (at[0.0] + at[1.0]), abs=1e-12)


def test_combined_example_with_default_weights():
    breakdown = combined_loss([0], np.log([[0.25, 0.75]]), np.array([[0.7, 0.3]]), 0.667, 0.25)
    a, b = 0.7**0.25, 0.3**0.25
    scaled = (a / (a + b), b / (a + b))
    distill = -scaled[0] * math.log(0.25) - scaled[1] * math.log(0.75)
    assert breakdown.standard == pytest.approx(math.log(4), abs=1e-12)
    assert breakdown.distill == pytest.approx(distill, abs=1e-12)
    assert breakdown.combined == pytest.approx(0.333 * math.log(4) + 0.667 * distill, abs=1e-12)
    assert breakdown.combined == pytest.approx(1.05857, abs=1e-4)


def test_combined_breakdown_invariants():
    x = np.array([0, 1, 2])
    student = np.log(_random_rows(8, 3, 3))
    teacher = _random_rows(9, 3, 3)
    b = combined_loss(x, student, teacher, 0.3, 0.7)
    assert b.standard == pytest.approx(b.per_token_standard.mean(), abs=1e-15)
    assert b.combined == pytest.approx(0.7 * b.standard + 0.3 * b.distill, abs=1e-12)


@pytest.mark.parametrize("omega", [-0.1, 1.5])
def test_combined_rejects_omega_outside_unit_interval(omega):
    with pytest.raises(ValueError):
        combined_loss([0], np.log([[0.5, 0.5]]), np.array([[0.5, 0.5]]), omega, 1.0)


def test_combined_matches_mixture_cross_entropy_per_token():
    x = np.array([3, 1, 0, 2])
    student = np.log(_random_rows(10, 4, 5))
    teacher = _random_rows(11, 4, 5)
    omega, rho = 0.667, 0.25
    scaled = temperature_scale(teacher, rho)
    b = combined_loss(x, student, teacher, omega, rho)
    per_token = (1 - omega) * b.per_token_standard + omega * b.per_token_distill
    for t in range(4):
        mix = mixture_dist(int(x[t]), scaled[t], omega)
        assert cross_entropy(mix, student[t]) == pytest.approx(per_token[t], abs=1e-12)


# -- mixture -------------------------------------------------------------------


def test_mixture_endpoints():
    q = np.array([0.2, 0.5, 0.3])
    np.testing.assert_array_equal(mixture_dist(1, q, 0.0), [0.0, 1.0, 0.0])
    np.testing.assert_allclose(mixture_dist(1, q, 1.0), q, atol=0)


def test_mixture_linearity_on_random_instances():
    rng = np.random.default_rng(12)
    for _ in range(100):
        p, q = rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(6))
        omega, xt = float(rng.random()), int(rng.integers(0, 6))
        lhs = cross_entropy(mixture_dist(xt, q, omega), np.log(p))
        rhs = (1 - omega) * -math.log(p[xt]) + omega * cross_entropy(q, np.log(p))
        assert lhs == pytest.approx(rhs, abs=1e-12)


def test_mixture_is_a_distribution():
    check_distribution(mixture_dist(0, np.array([0.1, 0.9]), 0.4))


# -- top-k ---------------------------------------------------------------------


def test_topk_with_full_vocabulary_equals_kd():
    teacher = _random_rows(13, 3, 4)
    student = np.log(_random_rows(14, 3, 4))
    assert topk_kd_loss(teacher, student, 4) == pytest.approx(kd_loss(teacher, student, 1.0), abs=1e-12)


def test_topk_uniform_student_gives_log_two():
    teacher = np.array([[0.4, 0.1, 0.3, 0.2]])
    student = np.full((1, 4), -math.log(4))
    assert topk_kd_loss(teacher, student, 2) == pytest.approx(math.log(2), abs=1e-12)


def test_topk_renormalises_teacher_over_its_top_set():
    teacher = np.array([[0.5, 0.3, 0.2]])
    student = np.log([[0.2, 0.2, 0.6]])
    expected = -0.625 * math.log(0.5) - 0.375 * math.log(0.5)
    assert topk_kd_loss(teacher, student, 2) == pytest.approx(expected, abs=1e-12)


def test_topk_rejects_bad_k():
    with pytest.raises(ValueError):
        topk_kd_loss(np.array([[0.5, 0.5]]), np.log([[0.5, 0.5]]), 3)


# -- tape versions agree with the numeric ones ---------------------------------


@pytest.mark.parametrize("omega,top_k", [(0.0, None), (0.667, None), (1.0, None), (0.5, 2)])
def test_graph_objective_matches_numeric(omega, top_k):
    rng = np.random.default_rng(15)
    tokens = rng.integers(0, 4, size=(3, 5))
    student = np.log(rng.dirichlet(np.ones(4), size=(3, 5)))
    targets = teacher_targets(np.log(rng.dirichlet(np.ones(4), size=(3, 5))), 0.25)
    tape = Tape()
    loss, std, dist = combined_graph(tape.param("logp", student), tokens, targets, omega, top_k)
    expected = []
    for b in range(3):
        ce = ce_loss(student[b], tokens[b])
        kd = topk_kd_loss(targets[b], student[b], top_k) if top_k else kd_loss(targets[b], student[b], 1.0)
        expected.append((1 - omega) * ce + omega * kd)
    assert float(loss.value) == pytest.approx(np.mean(expected), abs=1e-12)
    np.testing.assert_allclose(std.value, -np.take_along_axis(student, tokens[..., None], -1)[..., 0], atol=1e-15)
    assert (dist is None) == (omega == 0.0)


def test_graph_objective_needs_targets_when_distilling():
    tape = Tape()
    with pytest.raises(ValueError):
        combined_graph(tape.param("logp", np.log(np.full((1, 2, 3), 1 / 3))), np.zeros((1, 2), dtype=int), None, 0.5)


def test_teacher_targets_floor_zero_probabilities():
    with np.errstate(divide="ignore"):
        targets = teacher_targets(np.log(np.array([[1.0, 0.0, 0.0]])), 0.5)
    assert np.all(targets > 0)
    assert targets.sum() == pytest.approx(1.0, abs=1e-12)


def test_per_token_ce_picks_realised_tokens():
    logp = np.log(np.array([[0.1, 0.9], [0.6, 0.4]]))
    np.testing.assert_allclose(per_token_ce(logp, [1, 0]), [-math.log(0.9), -math.log(0.6)])
