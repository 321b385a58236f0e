"""Reverse-mode automatic differentiation over dense float64 matrices.

The design is a flat tape: every operation eagerly computes its value with
numpy and appends a node recording the op name, its inputs and any static
attributes. `grad` walks the tape once in reverse accumulating adjoints,
and `Tape.replay` re-executes the recorded forward pass, which must agree
bit-for-bit with the stored values because the same numpy calls run in the
same order.

All values are 2-D float64 arrays (scalars are 1x1). Inputs to an op may be
other Vars or plain ndarrays; plain arrays are closed-over constants that
receive no gradient, which is how frozen server broadcasts enter local
losses without being differentiated.
"""

from __future__ import annotations

from typing import Callable, Optional, Union

import numpy as np

from .errors import ContractError, NumericError, ShapeError

ArrayLike = Union["Var", np.ndarray]


def _as_matrix(value) -> np.ndarray:
    out = np.asarray(value, dtype=np.float64)
    if out.ndim == 0:
        out = out.reshape(1, 1)
    elif out.ndim == 1:
        out = out.reshape(1, -1)
    if out.ndim != 2:
        raise ShapeError(f"expected a matrix, got array of ndim {out.ndim}")
    return np.ascontiguousarray(out)


class Var:
    """One tape node: a value plus the recipe that produced it."""

    __slots__ = ("tape", "index", "value", "op", "inputs", "aux", "name")

    def __init__(self, tape: "Tape", index: int, value: np.ndarray, op: str,
                 inputs: tuple, aux: dict, name: Optional[str]):
        self.tape = tape
        self.index = index
        self.value = value
        self.op = op
        self.inputs = inputs
        self.aux = aux
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self) -> str:
        label = self.name or self.op
        return f"Var({label}, shape={self.value.shape})"

    def __matmul__(self, other: ArrayLike) -> "Var":
        return matmul(self, other)

    def __rmatmul__(self, other: np.ndarray) -> "Var":
        return matmul(other, self)

    def __add__(self, other: ArrayLike) -> "Var":
        return add(self, other)

    def __radd__(self, other: np.ndarray) -> "Var":
        return add(self, other)

    def __sub__(self, other: ArrayLike) -> "Var":
        if isinstance(other, Var):
            return add(self, scale(other, -1.0))
        return add(self, -_as_matrix(other))

    def __rsub__(self, other: np.ndarray) -> "Var":
        return add(scale(self, -1.0), _as_matrix(other))

    def __mul__(self, other) -> "Var":
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other) -> "Var":
        return self.__mul__(other)

    def __neg__(self) -> "Var":
        return scale(self, -1.0)


class Tape:
    """Ordered record of one forward computation."""

    def __init__(self):
        self.nodes: list[Var] = []
        self.leaves: list[Var] = []

    def leaf(self, value, name: Optional[str] = None) -> Var:
        """Register a differentiable input. Must already be a 2-D array."""
        if np.asarray(value).ndim != 2:
            raise ShapeError(f"leaf {name!r} must be 2-D,"
                             f" got ndim {np.asarray(value).ndim}")
        mat = _as_matrix(value).copy()
        if not np.isfinite(mat).all():
            raise NumericError(f"leaf {name or len(self.leaves)} has non-finite entries")
        var = Var(self, len(self.nodes), mat, "leaf", (), {}, name)
        self.nodes.append(var)
        self.leaves.append(var)
        return var

    def _record(self, op: str, inputs: tuple, aux: dict, value: np.ndarray) -> Var:
        var = Var(self, len(self.nodes), value, op, inputs, aux, None)
        self.nodes.append(var)
        return var

    def replay(self) -> list[np.ndarray]:
        """Re-run the recorded forward pass and return all recomputed values.

        Leaves reproduce their stored values; every interior node is
        recomputed from the replayed values of its inputs with the same
        numpy call that built it, so the result is bit-identical.
        """
        replayed: list[np.ndarray] = []
        for node in self.nodes:
            if node.op == "leaf":
                replayed.append(node.value.copy())
                continue
            vals = tuple(replayed[x.index] if isinstance(x, Var) else x
                         for x in node.inputs)
            replayed.append(_FORWARD[node.op](vals, node.aux))
        return replayed


def _tape_of(*operands) -> Tape:
    tape = None
    for item in operands:
        if isinstance(item, Var):
            if tape is None:
                tape = item.tape
            elif item.tape is not tape:
                raise ContractError("operands recorded on different tapes")
    if tape is None:
        raise ContractError("operation requires at least one tape variable")
    return tape


def _value(item) -> np.ndarray:
    return item.value if isinstance(item, Var) else item


# Forward rules, shared by the eager path and replay.

def _fw_matmul(vals, aux):
    return vals[0] @ vals[1]


def _fw_add(vals, aux):
    return vals[0] + vals[1]


def _fw_scale(vals, aux):
    return vals[0] * aux["alpha"]


def _fw_mul(vals, aux):
    return vals[0] * vals[1]


def _fw_transpose(vals, aux):
    return np.ascontiguousarray(vals[0].T)


def _fw_reshape(vals, aux):
    return np.ascontiguousarray(vals[0].reshape(aux["shape"]))


def _fw_log(vals, aux):
    return np.log(vals[0])


def _fw_exp(vals, aux):
    return np.exp(vals[0])


def _fw_sqrt(vals, aux):
    return np.sqrt(vals[0])


def _fw_square(vals, aux):
    return np.square(vals[0])


def _fw_absval(vals, aux):
    return np.abs(vals[0])


def _fw_tanh(vals, aux):
    return np.tanh(vals[0])


def _fw_sigmoid(vals, aux):
    x = vals[0]
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _fw_softplus(vals, aux):
    return np.logaddexp(0.0, vals[0])


def _fw_clip(vals, aux):
    return np.clip(vals[0], aux["lo"], aux["hi"])


def _fw_mean_rows(vals, aux):
    return vals[0].mean(axis=0, keepdims=True)


def _fw_sum_all(vals, aux):
    return np.array([[vals[0].sum()]])


_FORWARD: dict[str, Callable] = {
    "matmul": _fw_matmul,
    "add": _fw_add,
    "scale": _fw_scale,
    "mul": _fw_mul,
    "transpose": _fw_transpose,
    "reshape": _fw_reshape,
    "log": _fw_log,
    "exp": _fw_exp,
    "sqrt": _fw_sqrt,
    "square": _fw_square,
    "absval": _fw_absval,
    "tanh": _fw_tanh,
    "sigmoid": _fw_sigmoid,
    "softplus": _fw_softplus,
    "clip": _fw_clip,
    "mean_rows": _fw_mean_rows,
    "sum_all": _fw_sum_all,
}


# Backward rules: given input values, aux, output value and output adjoint,
# return one adjoint per input (None for constant inputs).

def _bw_matmul(vals, aux, out, g):
    a, b = vals
    return (g @ b.T, a.T @ g)


def _bw_add(vals, aux, out, g):
    return (g, g)


def _bw_scale(vals, aux, out, g):
    return (g * aux["alpha"],)


def _bw_mul(vals, aux, out, g):
    a, b = vals
    return (g * b, g * a)


def _bw_transpose(vals, aux, out, g):
    return (np.ascontiguousarray(g.T),)


def _bw_reshape(vals, aux, out, g):
    return (g.reshape(vals[0].shape),)


def _bw_log(vals, aux, out, g):
    return (g / vals[0],)


def _bw_exp(vals, aux, out, g):
    return (g * out,)


def _bw_sqrt(vals, aux, out, g):
    return (g * 0.5 / out,)


def _bw_square(vals, aux, out, g):
    return (g * 2.0 * vals[0],)


def _bw_absval(vals, aux, out, g):
    return (g * np.sign(vals[0]),)


def _bw_tanh(vals, aux, out, g):
    return (g * (1.0 - out * out),)


def _bw_sigmoid(vals, aux, out, g):
    return (g * out * (1.0 - out),)


def _bw_softplus(vals, aux, out, g):
    return (g * _fw_sigmoid((vals[0],), {}),)


def _bw_clip(vals, aux, out, g):
    inside = (vals[0] > aux["lo"]) & (vals[0] < aux["hi"])
    return (g * inside,)


def _bw_mean_rows(vals, aux, out, g):
    n = vals[0].shape[0]
    return (np.broadcast_to(g / n, vals[0].shape),)


def _bw_sum_all(vals, aux, out, g):
    return (np.full(vals[0].shape, g[0, 0]),)


_BACKWARD: dict[str, Callable] = {
    "matmul": _bw_matmul,
    "add": _bw_add,
    "scale": _bw_scale,
    "mul": _bw_mul,
    "transpose": _bw_transpose,
    "reshape": _bw_reshape,
    "log": _bw_log,
    "exp": _bw_exp,
    "sqrt": _bw_sqrt,
    "square": _bw_square,
    "absval": _bw_absval,
    "tanh": _bw_tanh,
    "sigmoid": _bw_sigmoid,
    "softplus": _bw_softplus,
    "clip": _bw_clip,
    "mean_rows": _bw_mean_rows,
    "sum_all": _bw_sum_all,
}


def _unary(op: str, a: Var, aux: Optional[dict] = None) -> Var:
    if not isinstance(a, Var):
        raise ContractError(f"{op} expects a tape variable")
    aux = aux or {}
    value = _FORWARD[op]((a.value,), aux)
    return a.tape._record(op, (a,), aux, value)


def matmul(a: ArrayLike, b: ArrayLike) -> Var:
    tape = _tape_of(a, b)
    av = _value(a) if isinstance(a, Var) else _as_matrix(a)
    bv = _value(b) if isinstance(b, Var) else _as_matrix(b)
    if av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul mismatch: {av.shape} @ {bv.shape}")
    inputs = (a if isinstance(a, Var) else av, b if isinstance(b, Var) else bv)
    return tape._record("matmul", inputs, {}, av @ bv)


def add(a: ArrayLike, b: ArrayLike) -> Var:
    tape = _tape_of(a, b)
    av = _value(a) if isinstance(a, Var) else _as_matrix(a)
    bv = _value(b) if isinstance(b, Var) else _as_matrix(b)
    if av.shape != bv.shape:
        raise ShapeError(f"add mismatch: {av.shape} + {bv.shape}")
    inputs = (a if isinstance(a, Var) else av, b if isinstance(b, Var) else bv)
    return tape._record("add", inputs, {}, av + bv)


def mul(a: ArrayLike, b: ArrayLike) -> Var:
    tape = _tape_of(a, b)
    av = _value(a) if isinstance(a, Var) else _as_matrix(a)
    bv = _value(b) if isinstance(b, Var) else _as_matrix(b)
    if av.shape != bv.shape:
        raise ShapeError(f"mul mismatch: {av.shape} * {bv.shape}")
    inputs = (a if isinstance(a, Var) else av, b if isinstance(b, Var) else bv)
    return tape._record("mul", inputs, {}, av * bv)


def scale(a: Var, alpha: float) -> Var:
    return _unary("scale", a, {"alpha": float(alpha)})


def transpose(a: Var) -> Var:
    return _unary("transpose", a)


def reshape(a: Var, shape: tuple) -> Var:
    shape = tuple(int(s) for s in shape)
    if len(shape) != 2:
        raise ShapeError(f"reshape target must be 2-D, got {shape}")
    if shape[0] * shape[1] != a.value.size:
        raise ShapeError(f"cannot reshape {a.value.shape} to {shape}")
    return _unary("reshape", a, {"shape": shape})


def log(a: Var) -> Var:
    if np.any(a.value <= 0):
        raise NumericError("log requires strictly positive entries")
    return _unary("log", a)


def exp(a: Var) -> Var:
    return _unary("exp", a)


def sqrt(a: Var) -> Var:
    if np.any(a.value < 0):
        raise NumericError("sqrt requires nonnegative entries")
    return _unary("sqrt", a)


def square(a: Var) -> Var:
    return _unary("square", a)


def absval(a: Var) -> Var:
    return _unary("absval", a)


def tanh(a: Var) -> Var:
    return _unary("tanh", a)


def sigmoid(a: Var) -> Var:
    return _unary("sigmoid", a)


def softplus(a: Var) -> Var:
    return _unary("softplus", a)


def clip(a: Var, lo: float, hi: float) -> Var:
    return _unary("clip", a, {"lo": float(lo), "hi": float(hi)})


def mean_rows(a: Var) -> Var:
    return _unary("mean_rows", a)


def sum_all(a: Var) -> Var:
    return _unary("sum_all", a)


def grad(tape: Tape, loss: Var) -> dict:
    """Return the gradient of a scalar loss with respect to every leaf.

    Leaves that do not influence the loss map to zero arrays of their shape.
    """
    if not isinstance(loss, Var) or loss.tape is not tape:
        raise ContractError("loss must be a variable recorded on this tape")
    if loss.value.shape != (1, 1):
        raise ShapeError(f"loss must be scalar (1x1), got {loss.value.shape}")
    adjoint: dict[int, np.ndarray] = {loss.index: np.ones((1, 1))}
    for node in reversed(tape.nodes[: loss.index + 1]):
        if node.op == "leaf":
            continue
        g = adjoint.pop(node.index, None)
        if g is None:
            continue
        vals = tuple(_value(x) for x in node.inputs)
        contribs = _BACKWARD[node.op](vals, node.aux, node.value, g)
        for inp, contrib in zip(node.inputs, contribs):
            if not isinstance(inp, Var) or contrib is None:
                continue
            seen = adjoint.get(inp.index)
            adjoint[inp.index] = contrib if seen is None else seen + contrib
    out = {}
    for leaf in tape.leaves:
        g = adjoint.get(leaf.index)
        g = np.zeros_like(leaf.value) if g is None else np.asarray(g, dtype=np.float64)
        if not np.isfinite(g).all():
            raise NumericError(f"gradient of leaf {leaf.name!r} is non-finite")
        out[leaf] = g
    return out
