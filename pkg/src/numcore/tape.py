"""
Append-only computation tape and reverse-mode backward pass.

A Tape records every primitive application as a Node whose inputs are ids of
earlier nodes, so the node list is topologically ordered by construction.
Leaves are either named parameters (gradients are returned for them) or
constants (treated as fixed).  One tape belongs to one thread.
"""

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from src.numcore.primitives import PRIMITIVES
from src.numcore.tensor import NonFiniteError, ShapeError, as_tensor

_LEAF_OPS = ("param", "const")


@dataclass(frozen=True)
class Node:
    id: int
    op: str
    inputs: tuple[int, ...]
    value: np.ndarray
    attrs: dict = field(default_factory=dict)
    saved: dict = field(default_factory=dict)
    name: str | None = None  # parameter name, leaves only


class Tape:

    def __init__(self):
        self.nodes: list[Node] = []
        self.outputs: list[int] = []

    def _append(self, op, inputs, value, attrs=None, saved=None, name=None) -> "Var":
        node = Node(len(self.nodes), op, tuple(inputs), value, attrs or {}, saved or {}, name)
        self.nodes.append(node)
        return Var(self, node.id)

    def param(self, name: str, value) -> "Var":
        """Leaf whose gradient backward() reports under `name`."""
        return self._append("param", (), as_tensor(value, name), name=name)

    def constant(self, value) -> "Var":
        return self._append("const", (), as_tensor(value, "constant"))

    def mark_output(self, var: "Var") -> None:
        self.outputs.append(var.id)

    def param_ids(self) -> dict[str, list[int]]:
        ids: dict[str, list[int]] = {}
        for node in self.nodes:
            if node.op == "param":
                ids.setdefault(node.name, []).append(node.id)
        return ids


@dataclass(frozen=True, eq=False)
class Var:
    """Handle to a node on a tape."""

    tape: Tape
    id: int

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.id].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def _lift(self, other) -> "Var":
        return other if isinstance(other, Var) else self.tape.constant(other)

    def __add__(self, other):
        return primitive_forward("add", [self, self._lift(other)], self.tape)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return primitive_forward("scale", [self], self.tape, factor=float(other))
        return primitive_forward("mul", [self, self._lift(other)], self.tape)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __matmul__(self, other):
        return primitive_forward("matmul", [self, self._lift(other)], self.tape)


def primitive_forward(op: str, inputs: Sequence[Var], tape: Tape, **attrs) -> Var:
    """Evaluate primitive `op` on `inputs` and record the application on `tape`."""
    prim = PRIMITIVES.get(op)
    if prim is None:
        raise ValueError(f"unknown primitive {op!r}; known: {sorted(PRIMITIVES)}")
    if prim.arity is not None and len(inputs) != prim.arity:
        raise ShapeError(f"{op}: expects {prim.arity} input(s), got {len(inputs)}")
    for v in inputs:
        if v.tape is not tape:
            raise ValueError(f"{op}: input node {v.id} belongs to a different tape")
    values = [tape.nodes[v.id].value for v in inputs]
    for i, val in enumerate(values):
        if not np.all(np.isfinite(val)):
            raise NonFiniteError(f"{op}: input {i} of shape {val.shape} contains NaN/Inf")
    out, saved = prim.forward(*values, **attrs)
    out = np.asarray(out, dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{op}: produced NaN/Inf from finite inputs of shapes {[v.shape for v in values]}")
    return tape._append(op, [v.id for v in inputs], out, attrs, saved)


def backward(tape: Tape, loss) -> dict[str, np.ndarray]:
    """
    Gradient of a scalar node with respect to every parameter leaf on the tape.

    Parameters that the loss does not depend on get zero gradients.  The
    result is a pure function of the tape: repeated calls are bit-identical.
    """
    loss_id = loss.id if isinstance(loss, Var) else int(loss)
    root = tape.nodes[loss_id]
    if root.value.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {root.value.shape}")

    grads: dict[int, np.ndarray] = {loss_id: np.ones_like(root.value)}
    result: dict[str, np.ndarray] = {}
    for nid in range(loss_id, -1, -1):
        g = grads.pop(nid, None)
        if g is None:
            continue
        node = tape.nodes[nid]
        if node.op == "param":
            result[node.name] = result[node.name] + g if node.name in result else g
            continue
        if node.op == "const":
            continue
        inputs = tuple(tape.nodes[i].value for i in node.inputs)
        input_grads = PRIMITIVES[node.op].vjp(g, inputs, node.value, node.saved, node.attrs)
        for inp, ig in zip(node.inputs, input_grads):
            if ig is None or tape.nodes[inp].op == "const":
                continue
            grads[inp] = grads[inp] + ig if inp in grads else ig

    for name, ids in tape.param_ids().items():
        if name not in result:
            result[name] = np.zeros_like(tape.nodes[ids[0]].value)
        else:
            result[name] = np.asarray(result[name], dtype=np.float64).reshape(tape.nodes[ids[0]].value.shape)
    return result


# -- functional helpers --------------------------------------------------------


def matmul(a: Var, b: Var) -> Var:
    return primitive_forward("matmul", [a, b], a.tape)


def transpose(x: Var) -> Var:
    return primitive_forward("transpose", [x], x.tape)


def exp(x: Var) -> Var:
    return primitive_forward("exp", [x], x.tape)


def gelu(x: Var) -> Var:
    return primitive_forward("gelu", [x], x.tape)


def row_log_softmax(x: Var) -> Var:
    return primitive_forward("row_log_softmax", [x], x.tape)


def layer_norm(x: Var, eps: float = 1e-5) -> Var:
    return primitive_forward("layer_norm", [x], x.tape, eps=eps)


def causal_mask(x: Var) -> Var:
    return primitive_forward("causal_mask", [x], x.tape)


def embedding_lookup(table: Var, ids) -> Var:
    return primitive_forward("embedding_lookup", [table], table.tape, ids=np.asarray(ids))


def slice_axis(x: Var, axis: int, start: int, stop: int) -> Var:
    return primitive_forward("slice", [x], x.tape, axis=axis, start=start, stop=stop)


def concat(xs: Sequence[Var], axis: int) -> Var:
    return primitive_forward("concat", list(xs), xs[0].tape, axis=axis)


def reduce_mean(x: Var, axis: int | None = None) -> Var:
    return primitive_forward("reduce_mean", [x], x.tape, axis=axis)


def gather_logp(x: Var, index) -> Var:
    return primitive_forward("gather_logp", [x], x.tape, index=np.asarray(index))
