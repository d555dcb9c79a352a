"""
Primitive registry: forward rule + vector-Jacobian product per op.

Each forward takes the input arrays plus keyword attributes and returns
(output, saved) where `saved` holds whatever the VJP needs beyond the inputs
and the output.  Each VJP receives (g, inputs, output, saved, attrs) and returns
one gradient per input, already reduced to that input's shape.

Integer payloads (token ids, gather indices) travel as attributes, never as
differentiable inputs.
"""

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from src.numcore.tensor import ShapeError

# Value written into masked attention scores.  Finite, and exp() of it is exactly 0.
MASK_VALUE = -1e9

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_K = 0.044715


@dataclass(frozen=True)
class Primitive:
    name: str
    arity: int | None  # None = variadic
    forward: Callable[..., tuple[np.ndarray, dict]]
    vjp: Callable[..., tuple[np.ndarray, ...]]


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` over the axes that broadcasting added or stretched to reach g.shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op: str, a: np.ndarray, b: np.ndarray) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


# -- elementwise -------------------------------------------------------------


def _add_fwd(a, b):
    _broadcast_shape("add", a, b)
    return a + b, {}


def _add_vjp(g, inputs, out, saved, attrs):
    a, b = inputs
    return unbroadcast(g, a.shape), unbroadcast(g, b.shape)


def _mul_fwd(a, b):
    _broadcast_shape("mul", a, b)
    return a * b, {}


def _mul_vjp(g, inputs, out, saved, attrs):
    a, b = inputs
    return unbroadcast(g * b, a.shape), unbroadcast(g * a, b.shape)


def _scale_fwd(x, *, factor: float):
    return x * float(factor), {}


def _scale_vjp(g, inputs, out, saved, attrs):
    return (g * float(attrs["factor"]),)


def _exp_fwd(x):
    return np.exp(x), {}


def _exp_vjp(g, inputs, out, saved, attrs):
    return (g * out,)


def _gelu_fwd(x):
    # tanh approximation; smooth everywhere, gelu(0) = 0
    t = np.tanh(_GELU_C * (x + _GELU_K * x**3))
    return 0.5 * x * (1.0 + t), {"t": t}


def _gelu_vjp(g, inputs, out, saved, attrs):
    (x,) = inputs
    t = saved["t"]
    du = _GELU_C * (1.0 + 3.0 * _GELU_K * x**2)
    return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)


# -- linear algebra ----------------------------------------------------------


def _matmul_fwd(a, b):
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None
    return np.matmul(a, b), {}


def _matmul_vjp(g, inputs, out, saved, attrs):
    a, b = inputs
    return unbroadcast(np.matmul(g, _swap(b)), a.shape), unbroadcast(np.matmul(_swap(a), g), b.shape)


def _transpose_fwd(x):
    if x.ndim < 2:
        raise ShapeError(f"transpose: needs at least 2 dims, got shape {x.shape}")
    return np.ascontiguousarray(_swap(x)), {}


def _transpose_vjp(g, inputs, out, saved, attrs):
    return (_swap(g),)


# -- normalisation -----------------------------------------------------------


def _row_log_softmax_fwd(x):
    m = x.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True))
    return x - lse, {}


def _row_log_softmax_vjp(g, inputs, out, saved, attrs):
    return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)


def _layer_norm_fwd(x, *, eps: float = 1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    return centered * inv, {"inv": inv}


def _layer_norm_vjp(g, inputs, out, saved, attrs):
    y = out
    inv = saved["inv"]
    gm = g.mean(axis=-1, keepdims=True)
    gym = (g * y).mean(axis=-1, keepdims=True)
    return (inv * (g - gm - y * gym),)


def _causal_mask_fwd(x):
    if x.ndim < 2 or x.shape[-1] != x.shape[-2]:
        raise ShapeError(f"causal_mask: last two dims must be square, got shape {x.shape}")
    n = x.shape[-1]
    future = np.triu(np.ones((n, n), dtype=bool), k=1)
    return np.where(future, MASK_VALUE, x), {"future": future}


def _causal_mask_vjp(g, inputs, out, saved, attrs):
    return (np.where(saved["future"], 0.0, g),)


# -- indexing ----------------------------------------------------------------


def _embedding_lookup_fwd(table, *, ids: np.ndarray):
    if table.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be [V, d], got shape {table.shape}")
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError(f"embedding_lookup: ids must be integers, got dtype {ids.dtype}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(
            f"embedding_lookup: ids out of range [0, {table.shape[0]}): min={ids.min()} max={ids.max()}"
        )
    return table[ids], {}


def _embedding_lookup_vjp(g, inputs, out, saved, attrs):
    (table,) = inputs
    grad = np.zeros_like(table)
    np.add.at(grad, np.asarray(attrs["ids"]), g)
    return (grad,)


def _slice_index(ndim: int, axis: int, start: int, stop: int) -> tuple:
    return (slice(None),) * (axis % ndim) + (slice(start, stop),)


def _slice_fwd(x, *, axis: int, start: int, stop: int):
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"slice: axis {axis} out of range for shape {x.shape}")
    size = x.shape[axis]
    if not 0 <= start < stop <= size:
        raise ShapeError(f"slice: [{start}:{stop}] invalid for axis {axis} of shape {x.shape}")
    return np.ascontiguousarray(x[_slice_index(x.ndim, axis, start, stop)]), {}


def _slice_vjp(g, inputs, out, saved, attrs):
    (x,) = inputs
    grad = np.zeros_like(x)
    grad[_slice_index(x.ndim, attrs["axis"], attrs["start"], attrs["stop"])] = g
    return (grad,)


def _concat_fwd(*xs, axis: int):
    if not xs:
        raise ShapeError("concat: needs at least one input")
    ref = xs[0].shape
    ax = axis % len(ref)
    for x in xs[1:]:
        if x.ndim != len(ref) or any(d != r for i, (d, r) in enumerate(zip(x.shape, ref)) if i != ax):
            raise ShapeError(f"concat: shapes {[x.shape for x in xs]} disagree off axis {axis}")
    return np.concatenate(xs, axis=axis), {}


def _concat_vjp(g, inputs, out, saved, attrs):
    axis = attrs["axis"]
    bounds = np.cumsum([x.shape[axis] for x in inputs])[:-1]
    return tuple(np.split(g, bounds, axis=axis))


def _reduce_mean_fwd(x, *, axis: int | None = None):
    if axis is not None and not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"reduce_mean: axis {axis} out of range for shape {x.shape}")
    return np.asarray(x.mean(axis=axis)), {}


def _reduce_mean_vjp(g, inputs, out, saved, attrs):
    (x,) = inputs
    axis = attrs.get("axis")
    if axis is None:
        return (np.full(x.shape, float(g) / x.size),)
    return (np.broadcast_to(np.expand_dims(g, axis) / x.shape[axis], x.shape).copy(),)


def _gather_index(x: np.ndarray, index: np.ndarray) -> np.ndarray:
    index = np.asarray(index)
    if not np.issubdtype(index.dtype, np.integer):
        raise ShapeError(f"gather_logp: index must be integers, got dtype {index.dtype}")
    if index.shape == x.shape[:-1]:
        index = index[..., None]
    elif index.shape[:-1] != x.shape[:-1]:
        raise ShapeError(f"gather_logp: index shape {index.shape} does not match values {x.shape}")
    if index.size and (index.min() < 0 or index.max() >= x.shape[-1]):
        raise ShapeError(f"gather_logp: index out of range [0, {x.shape[-1]})")
    return index


def _gather_logp_fwd(x, *, index: np.ndarray):
    idx = _gather_index(x, index)
    picked = np.take_along_axis(x, idx, axis=-1)
    if np.asarray(index).shape == x.shape[:-1]:
        picked = picked[..., 0]
    return picked, {"idx": idx}


def _gather_logp_vjp(g, inputs, out, saved, attrs):
    (x,) = inputs
    idx = saved["idx"]
    rows = idx.reshape(-1, idx.shape[-1])
    grad = np.zeros((rows.shape[0], x.shape[-1]))
    np.add.at(grad, (np.arange(rows.shape[0])[:, None], rows), np.reshape(g, rows.shape))
    return (grad.reshape(x.shape),)


PRIMITIVES: dict[str, Primitive] = {
    p.name: p
    for p in (
        Primitive("add", 2, _add_fwd, _add_vjp),
        Primitive("mul", 2, _mul_fwd, _mul_vjp),
        Primitive("scale", 1, _scale_fwd, _scale_vjp),
        Primitive("exp", 1, _exp_fwd, _exp_vjp),
        Primitive("gelu", 1, _gelu_fwd, _gelu_vjp),
        Primitive("matmul", 2, _matmul_fwd, _matmul_vjp),
        Primitive("transpose", 1, _transpose_fwd, _transpose_vjp),
        Primitive("row_log_softmax", 1, _row_log_softmax_fwd, _row_log_softmax_vjp),
        Primitive("layer_norm", 1, _layer_norm_fwd, _layer_norm_vjp),
        Primitive("causal_mask", 1, _causal_mask_fwd, _causal_mask_vjp),
        Primitive("embedding_lookup", 1, _embedding_lookup_fwd, _embedding_lookup_vjp),
        Primitive("slice", 1, _slice_fwd, _slice_vjp),
        Primitive("concat", None, _concat_fwd, _concat_vjp),
        Primitive("reduce_mean", 1, _reduce_mean_fwd, _reduce_mean_vjp),
        Primitive("gather_logp", 1, _gather_logp_fwd, _gather_logp_vjp),
    )
}
