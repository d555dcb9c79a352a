"""
numcore: seeded streams, tensors, primitives, backward and the gradient oracle.
"""

import numpy as np
import pytest

from src.numcore import tape as nc
from src.numcore.gradcheck import grad_check
from src.numcore.primitives import MASK_VALUE, PRIMITIVES
from src.numcore.rng import Rng, derive_seed
from src.numcore.tape import Tape, backward
from src.numcore.tensor import NonFiniteError, ShapeError, as_tensor


# -- random streams ------------------------------------------------------------


def test_derived_streams_are_reproducible():
    a = Rng(7).derive("batches").generator().random(5)
    b = Rng(7).derive("batches").generator().random(5)
    np.testing.assert_array_equal(a, b)


def test_different_labels_give_different_streams():
    assert derive_seed(7, "corpus/train") != derive_seed(7, "corpus/held_out")
    a = Rng(7).derive("corpus/train").generator().random(5)
    b = Rng(7).derive("corpus/held_out").generator().random(5)
    assert not np.array_equal(a, b)


def test_derive_is_a_function_of_seed_and_label():
    assert Rng(3).derive("x").seed == derive_seed(3, "x")


def test_rng_rejects_out_of_range_seed():
    with pytest.raises(ValueError):
        Rng(-1)
    with pytest.raises(ValueError):
        Rng(2**64)


# -- tensors -------------------------------------------------------------------


def test_as_tensor_copies_to_float64():
    src = np.array([1, 2, 3])
    t = as_tensor(src)
    assert t.dtype == np.float64
    t[0] = 99
    assert src[0] == 1


def test_as_tensor_rejects_nan():
    with pytest.raises(NonFiniteError):
        as_tensor([1.0, float("nan")])


def test_as_tensor_rejects_empty_dimension():
    with pytest.raises(ShapeError):
        as_tensor(np.zeros((0, 3)))


# -- primitives ----------------------------------------------------------------


def test_row_log_softmax_rows_normalise():
    tape = Tape()
    x = tape.param("x", np.random.default_rng(0).normal(size=(4, 6)) * 30)
    out = nc.row_log_softmax(x).value
    np.testing.assert_allclose(np.exp(out).sum(axis=-1), 1.0, atol=1e-12)


def test_causal_mask_hides_the_future():
    tape = Tape()
    out = nc.causal_mask(tape.param("s", np.ones((3, 3)))).value
    assert out[0, 1] == MASK_VALUE and out[0, 2] == MASK_VALUE and out[1, 2] == MASK_VALUE
    assert out[2, 0] == 1.0 and out[1, 1] == 1.0
    masked = np.exp(nc.row_log_softmax(nc.causal_mask(tape.param("t", np.zeros((3, 3))))).value)
    assert masked[0, 1] == 0.0


def test_matmul_shape_mismatch_is_rejected():
    tape = Tape()
    with pytest.raises(ShapeError):
        nc.matmul(tape.param("a", np.ones((2, 3))), tape.param("b", np.ones((2, 3))))


def test_embedding_lookup_rejects_out_of_range_ids():
    tape = Tape()
    with pytest.raises(ShapeError):
        nc.embedding_lookup(tape.param("e", np.ones((4, 2))), np.array([0, 4]))


def test_unknown_primitive_is_rejected():
    tape = Tape()
    x = tape.param("x", np.ones(2))
    with pytest.raises(ValueError):
        nc.primitive_forward("cosh", [x], tape)


def test_non_finite_output_raises():
    tape = Tape()
    with pytest.raises(NonFiniteError):
        nc.exp(tape.param("x", np.array([1000.0])))


# -- backward ------------------------------------------------------------------


def test_backward_of_mean_square():
    x0 = np.array([[1.0, -2.0], [3.0, 0.5]])
    tape = Tape()
    x = tape.param("x", x0)
    grads = backward(tape, nc.reduce_mean(x * x))
    np.testing.assert_allclose(grads["x"], 2.0 * x0 / x0.size, rtol=0, atol=1e-15)


def test_backward_gives_zero_for_unused_parameters():
    tape = Tape()
    x = tape.param("x", np.ones(3))
    tape.param("unused", np.ones((2, 2)))
    grads = backward(tape, nc.reduce_mean(x))
    np.testing.assert_array_equal(grads["unused"], np.zeros((2, 2)))


def test_backward_accumulates_reused_parameters():
    tape = Tape()
    x = tape.param("x", np.array([2.0]))
    grads = backward(tape, nc.reduce_mean(x * x + x))
    assert grads["x"][0] == pytest.approx(5.0)


def test_backward_is_bit_identical_on_repeat():
    rng = np.random.default_rng(1)
    tape = Tape()
    w = tape.param("w", rng.normal(size=(5, 4)))
    h = nc.layer_norm(nc.gelu(tape.constant(rng.normal(size=(3, 5))) @ w))
    loss = nc.reduce_mean(nc.row_log_softmax(h))
    first, second = backward(tape, loss), backward(tape, loss)
    np.testing.assert_array_equal(first["w"], second["w"])


def test_backward_requires_scalar_loss():
    tape = Tape()
    x = tape.param("x", np.ones(3))
    with pytest.raises(ShapeError):
        backward(tape, x * 2.0)


# -- gradient oracle -----------------------------------------------------------


def _attention_like(tape, p):
    scores = nc.causal_mask(p["q"] @ nc.transpose(p["k"]))
    probs = nc.exp(nc.row_log_softmax(scores))
    h = nc.layer_norm(nc.gelu(probs @ p["v"]))
    logp = nc.row_log_softmax(nc.concat([h, nc.slice_axis(h, 1, 0, 2)], axis=1))
    return -nc.reduce_mean(nc.gather_logp(logp, np.array([0, 3, 1, 5])))


@pytest.mark.parametrize("seed", range(5))
def test_grad_check_passes_on_composite_graph(seed):
    rng = np.random.default_rng(seed)
    params = {name: rng.normal(size=(4, 4)) for name in ("q", "k", "v")}
    report = grad_check(_attention_like, params)
    assert report.passed, report
    assert report.n_checked == 48


def test_grad_check_embedding_path():
    ids = np.array([[0, 2, 2], [1, 0, 3]])

    def f(tape, p):
        return nc.reduce_mean(nc.gelu(nc.embedding_lookup(p["e"], ids)))

    report = grad_check(f, {"e": np.random.default_rng(0).normal(size=(4, 3))})
    assert report.passed


def test_grad_check_samples_components():
    rng = np.random.default_rng(0)
    params = {name: rng.normal(size=(4, 4)) for name in ("q", "k", "v")}
    report = grad_check(_attention_like, params, max_components=5)
    assert report.n_checked == 15


def test_grad_check_rejects_bad_step():
    with pytest.raises(ValueError):
        grad_check(_attention_like, {"q": np.ones((4, 4))}, h=1e-2)


def test_grad_check_reports_non_finite_loss():
    def f(tape, p):
        return nc.reduce_mean(nc.exp(p["x"]))

    report = grad_check(f, {"x": np.array([800.0])})
    assert not report.passed
    assert report.error


# -- every primitive against finite differences --------------------------------


def _scalarise(out, seed):
    """Weighted mean of `out` with fixed weights, so every output entry reaches the loss."""
    weights = np.random.default_rng(10_000 + seed).normal(size=out.shape)
    return nc.reduce_mean(out * out.tape.constant(weights))


def _dims(rng, n):
    return [int(d) for d in rng.integers(2, 5, size=n)]


def _add_case(rng):
    r, c = _dims(rng, 2)
    return {"a": rng.normal(size=(r, c)), "b": rng.normal(size=(1, c))}, lambda t, p: p["a"] + p["b"]


def _mul_case(rng):
    r, c = _dims(rng, 2)
    return {"a": rng.normal(size=(r, c)), "b": rng.normal(size=(r, 1))}, lambda t, p: p["a"] * p["b"]


def _scale_case(rng):
    factor = float(rng.normal())
    return {"x": rng.normal(size=tuple(_dims(rng, 2)))}, lambda t, p: p["x"] * factor


def _exp_case(rng):
    return {"x": rng.normal(size=tuple(_dims(rng, 2)))}, lambda t, p: nc.exp(p["x"])


def _gelu_case(rng):
    return {"x": 2.0 * rng.normal(size=tuple(_dims(rng, 2)))}, lambda t, p: nc.gelu(p["x"])


def _matmul_case(rng):
    n, k, m, batch = _dims(rng, 4)
    return ({"a": rng.normal(size=(batch, n, k)), "b": rng.normal(size=(k, m))},
            lambda t, p: nc.matmul(p["a"], p["b"]))


def _transpose_case(rng):
    return {"x": rng.normal(size=tuple(_dims(rng, 3)))}, lambda t, p: nc.transpose(p["x"])


def _row_log_softmax_case(rng):
    return {"x": 3.0 * rng.normal(size=tuple(_dims(rng, 2)))}, lambda t, p: nc.row_log_softmax(p["x"])


def _layer_norm_case(rng):
    r, c = _dims(rng, 2)
    return {"x": rng.normal(size=(r, c + 1))}, lambda t, p: nc.layer_norm(p["x"])


def _causal_mask_case(rng):
    n = _dims(rng, 1)[0]
    # exp() of the masked entries is exactly zero, so the loss stays O(1)
    return {"x": rng.normal(size=(2, n, n))}, lambda t, p: nc.exp(nc.causal_mask(p["x"]))


def _embedding_lookup_case(rng):
    vocab, d = _dims(rng, 2)
    ids = rng.integers(0, vocab, size=(2, 3))
    return {"e": rng.normal(size=(vocab, d))}, lambda t, p: nc.embedding_lookup(p["e"], ids)


def _slice_case(rng):
    shape = tuple(_dims(rng, 3))
    axis = int(rng.integers(0, 3))
    start = int(rng.integers(0, shape[axis] - 1))
    stop = int(rng.integers(start + 1, shape[axis] + 1))
    return {"x": rng.normal(size=shape)}, lambda t, p: nc.slice_axis(p["x"], axis, start, stop)


def _concat_case(rng):
    r, c1, c2, c3 = _dims(rng, 4)
    params = {"a": rng.normal(size=(r, c1)), "b": rng.normal(size=(r, c2)), "c": rng.normal(size=(r, c3))}
    return params, lambda t, p: nc.concat([p["a"], p["b"], p["c"]], axis=1)


def _reduce_mean_case(rng):
    axis = int(rng.integers(0, 2))
    return {"x": rng.normal(size=tuple(_dims(rng, 2)))}, lambda t, p: nc.reduce_mean(p["x"], axis=axis)


def _gather_logp_case(rng):
    r, v = _dims(rng, 2)
    index = rng.integers(0, v, size=r)
    return ({"x": rng.normal(size=(r, v))},
            lambda t, p: nc.gather_logp(nc.row_log_softmax(p["x"]), index))


CASES = {
    "add": _add_case,
    "mul": _mul_case,
    "scale": _scale_case,
    "exp": _exp_case,
    "gelu": _gelu_case,
    "matmul": _matmul_case,
    "transpose": _transpose_case,
    "row_log_softmax": _row_log_softmax_case,
    "layer_norm": _layer_norm_case,
    "causal_mask": _causal_mask_case,
    "embedding_lookup": _embedding_lookup_case,
    "slice": _slice_case,
    "concat": _concat_case,
    "reduce_mean": _reduce_mean_case,
    "gather_logp": _gather_logp_case,
}


def test_every_primitive_has_a_gradient_case():
    assert set(CASES) == set(PRIMITIVES)


@pytest.mark.parametrize("seed", range(100))
@pytest.mark.parametrize("op", sorted(CASES))
def test_primitive_vjp_matches_finite_differences(op, seed):
    params, build = CASES[op](np.random.default_rng(seed))
    report = grad_check(lambda tape, p: _scalarise(build(tape, p), seed), params)
    assert report.passed, (op, seed, report)
    assert report.n_checked == sum(v.size for v in params.values())


# -- literal cases -------------------------------------------------------------


@pytest.mark.parametrize("shift", [-50.0, 1.0, 1e3])
def test_row_log_softmax_is_shift_invariant(shift):
    x = np.random.default_rng(3).normal(size=(5, 7)) * 4
    tape = Tape()
    base = nc.row_log_softmax(tape.param("x", x)).value
    shifted = nc.row_log_softmax(tape.param("y", x + shift)).value
    np.testing.assert_allclose(shifted, base, rtol=0, atol=1e-9)


def test_matmul_by_identity():
    tape = Tape()
    out = nc.matmul(tape.param("a", [[1.0, 2.0], [3.0, 4.0]]), tape.constant(np.eye(2))).value
    np.testing.assert_array_equal(out, [[1.0, 2.0], [3.0, 4.0]])


def test_row_log_softmax_of_equal_logits():
    tape = Tape()
    out = nc.row_log_softmax(tape.param("x", [[0.0, 0.0]])).value
    np.testing.assert_allclose(out, [[-np.log(2.0), -np.log(2.0)]], rtol=0, atol=1e-15)


def test_gelu_of_zero_and_layer_norm_of_constant_row():
    tape = Tape()
    assert nc.gelu(tape.param("z", np.zeros(3))).value.tolist() == [0.0, 0.0, 0.0]
    np.testing.assert_array_equal(nc.layer_norm(tape.param("c", np.full((2, 4), 3.5))).value, 0.0)


def test_gradient_of_weighted_sum_is_the_weights():
    c = np.random.default_rng(4).normal(size=(3, 4))
    tape = Tape()
    p = tape.param("p", np.ones((3, 4)))
    loss = nc.reduce_mean(p * tape.constant(c)) * float(c.size)
    np.testing.assert_allclose(backward(tape, loss)["p"], c, rtol=0, atol=1e-15)


def test_log_softmax_pick_gradient_is_onehot_minus_softmax():
    z = np.array([[0.3, -1.2, 2.0, 0.1]])
    tape = Tape()
    loss = nc.reduce_mean(nc.gather_logp(nc.row_log_softmax(tape.param("z", z)), np.array([2])))
    softmax = np.exp(z) / np.exp(z).sum()
    np.testing.assert_allclose(backward(tape, loss)["z"], np.eye(4)[[2]] - softmax, rtol=0, atol=1e-15)
