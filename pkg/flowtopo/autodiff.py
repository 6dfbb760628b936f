"""Reverse-mode automatic differentiation over dense float64 arrays.

Spatial derivatives never go through this module; they are finite-difference
stencils built from ``getitem``/``scale``/``add`` nodes and therefore appear on
the tape as fixed linear maps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from numbers import Real
from typing import Any, Callable

import numpy as np
from scipy.special import expit

from flowtopo.errors import ShapeError

ArrayLike = Any


@dataclass(frozen=True)
class Node:
    """One recorded operation (or leaf) on a tape."""

    kind: str
    inputs: tuple[int, ...]
    data: np.ndarray
    attrs: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class OpRule:
    forward: Callable[..., np.ndarray]
    vjp: Callable[..., tuple[np.ndarray | None, ...]]
    check: Callable[..., None] | None = None


def _freeze(array: np.ndarray) -> np.ndarray:
    array = np.asarray(array, dtype=np.float64)
    array.setflags(write=False)
    return array


# ── Shape checks ─────────────────────────────────────────────


def _same_shape(kind: str, a: np.ndarray, b: np.ndarray, **_: Any) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} do not conform")


def _check_matmul(kind: str, a: np.ndarray, b: np.ndarray, **_: Any) -> None:
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} do not conform")


def _check_broadcast_add(kind: str, a: np.ndarray, b: np.ndarray, **_: Any) -> None:
    row = b.shape[-1] if b.ndim in (1, 2) else None
    if a.ndim != 2 or row != a.shape[1] or (b.ndim == 2 and b.shape[0] != 1):
        raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} do not conform")


def _check_reshape(kind: str, a: np.ndarray, *, shape: tuple[int, ...]) -> None:
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"{kind}: cannot reshape {a.shape} to {shape}")


def _check_concat(kind: str, *arrays: np.ndarray, axis: int) -> None:
    ref = arrays[0]
    for other in arrays[1:]:
        if other.ndim != ref.ndim or any(
            s != t for d, (s, t) in enumerate(zip(ref.shape, other.shape, strict=True)) if d != axis % ref.ndim
        ):
            raise ShapeError(f"{kind}: shapes {ref.shape} and {other.shape} do not conform along axis {axis}")


# ── Vector-Jacobian products ─────────────────────────────────
#
# Cotangents carry a leading batch axis, one row per loss being differentiated,
# so several scalar terms share one reverse sweep.


def _matmul_vjp(g, out, a, b):
    if b.ndim == 1:
        return g[..., :, None] * b, g @ a
    return g @ b.T, a.T @ g


def _batched_ones(g, shape):
    return np.broadcast_to(g.reshape(g.shape[:1] + (1,) * len(shape)), g.shape[:1] + shape).copy()


def _getitem_vjp(g, out, a, *, index):
    grad = np.zeros(g.shape[:1] + a.shape)
    basic = all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in index)
    if basic:
        grad[(slice(None), *index)] = g
    else:
        for row, g_row in zip(grad, g, strict=True):
            np.add.at(row, index, g_row)
    return (grad,)


def _concat_vjp(g, out, *arrays, axis):
    axis = axis % arrays[0].ndim
    bounds = np.cumsum([a.shape[axis] for a in arrays])[:-1]
    return tuple(np.split(g, bounds, axis=axis + 1))


_RULES: dict[str, OpRule] = {
    "matmul": OpRule(lambda a, b: a @ b, _matmul_vjp, _check_matmul),
    "add": OpRule(lambda a, b: a + b, lambda g, out, a, b: (g, g), _same_shape),
    "sub": OpRule(lambda a, b: a - b, lambda g, out, a, b: (g, -g), _same_shape),
    "broadcast_add": OpRule(
        lambda a, b: a + b.reshape(1, -1),
        lambda g, out, a, b: (g, g.sum(axis=1).reshape(g.shape[:1] + b.shape)),
        _check_broadcast_add,
    ),
    "mul": OpRule(lambda a, b: a * b, lambda g, out, a, b: (g * b, g * a), _same_shape),
    "tanh": OpRule(np.tanh, lambda g, out, a: (g * (1.0 - out * out),)),
    "logistic": OpRule(expit, lambda g, out, a: (g * out * (1.0 - out),)),
    "exp": OpRule(np.exp, lambda g, out, a: (g * out,)),
    "square": OpRule(np.square, lambda g, out, a: (2.0 * a * g,)),
    "reciprocal": OpRule(np.reciprocal, lambda g, out, a: (-g * out * out,)),
    "sum": OpRule(lambda a: np.sum(a), lambda g, out, a: (_batched_ones(g, a.shape),)),
    "mean": OpRule(lambda a: np.mean(a), lambda g, out, a: (_batched_ones(g / a.size, a.shape),)),
    "relu": OpRule(lambda a: np.maximum(a, 0.0), lambda g, out, a: (g * (a > 0.0),)),
    "scale": OpRule(lambda a, *, factor: a * factor, lambda g, out, a, *, factor: (g * factor,)),
    "shift": OpRule(lambda a, *, offset: a + offset, lambda g, out, a, *, offset: (g,)),
    "getitem": OpRule(lambda a, *, index: a[index], _getitem_vjp),
    "reshape": OpRule(
        lambda a, *, shape: a.reshape(shape),
        lambda g, out, a, *, shape: (g.reshape(g.shape[:1] + a.shape),),
        _check_reshape,
    ),
    "concat": OpRule(lambda *arrays, axis: np.concatenate(arrays, axis=axis), _concat_vjp, _check_concat),
}

SUPPORTED_OPS = tuple(_RULES)


class GradientMap:
    """Gradients of one scalar with respect to every parameter leaf of a tape."""

    def __init__(self, tape: Tape, grads: dict[int, np.ndarray]):
        self._tape = tape
        self._grads = grads

    def __getitem__(self, leaf: Value | int) -> np.ndarray:
        node_id = leaf.id if isinstance(leaf, Value) else leaf
        if node_id not in self._tape.parameters:
            raise KeyError(f"node {node_id} is not a parameter leaf")
        grad = self._grads.get(node_id)
        if grad is None:
            return np.zeros(self._tape.nodes[node_id].data.shape)
        return grad

    def __contains__(self, leaf: Value | int) -> bool:
        node_id = leaf.id if isinstance(leaf, Value) else leaf
        return node_id in self._tape.parameters

    def items(self):
        for node_id in sorted(self._tape.parameters):
            yield node_id, self[node_id]


class Tape:
    """Append-only record of eagerly evaluated operations.

    Build one tape per optimization step and drop it afterwards.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.parameters: set[int] = set()

    def __len__(self) -> int:
        return len(self.nodes)

    def _append(self, node: Node) -> Value:
        self.nodes.append(node)
        return Value(self, len(self.nodes) - 1)

    def parameter(self, data: ArrayLike) -> Value:
        value = self._append(Node("leaf", (), _freeze(np.array(data, dtype=np.float64))))
        self.parameters.add(value.id)
        return value

    def constant(self, data: ArrayLike) -> Value:
        return self._append(Node("leaf", (), _freeze(np.array(data, dtype=np.float64))))

    def record(self, kind: str, *inputs: Value, **attrs: Any) -> Value:
        rule = _RULES.get(kind)
        if rule is None:
            raise ValueError(f"Unsupported operation '{kind}'")
        for value in inputs:
            if value.tape is not self:
                raise ValueError(f"{kind}: input belongs to a different tape")
        arrays = [self.nodes[value.id].data for value in inputs]
        if rule.check is not None:
            rule.check(kind, *arrays, **attrs)
        data = _freeze(rule.forward(*arrays, **attrs))
        return self._append(Node(kind, tuple(value.id for value in inputs), data, attrs))

    def backward(self, loss: Value) -> GradientMap:
        """Reverse sweep from ``loss``; the tape itself is left untouched."""
        return self.backward_many([loss])[0]

    def backward_many(self, losses: list[Value]) -> list[GradientMap]:
        """Gradients of several scalar nodes from one reverse sweep.

        Row ``k`` of every cotangent belongs to ``losses[k]``, so the result
        equals calling ``backward`` once per loss.
        """
        count = len(losses)
        adjoints: dict[int, np.ndarray] = {}
        for k, loss in enumerate(losses):
            if loss.tape is not self:
                raise ValueError("backward: loss belongs to a different tape")
            if loss.shape != ():
                raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
            seed = adjoints.setdefault(loss.id, np.zeros(count))
            seed[k] += 1.0
        if not losses:
            return []

        grads: dict[int, np.ndarray] = {}
        for node_id in range(max(loss.id for loss in losses), -1, -1):
            g = adjoints.pop(node_id, None)
            if g is None:
                continue
            node = self.nodes[node_id]
            if not node.inputs:
                if node_id in self.parameters:
                    grads[node_id] = np.asarray(g, dtype=np.float64).reshape((count, *node.data.shape))
                continue
            in_data = [self.nodes[i].data for i in node.inputs]
            parts = _RULES[node.kind].vjp(g, node.data, *in_data, **node.attrs)
            for input_id, part in zip(node.inputs, parts, strict=True):
                if part is None:
                    continue
                previous = adjoints.get(input_id)
                adjoints[input_id] = part if previous is None else previous + part
        return [GradientMap(self, {node_id: grad[k] for node_id, grad in grads.items()}) for k in range(count)]


class Value:
    """Handle to a node on a tape; arithmetic records new nodes."""

    __slots__ = ("tape", "id")
    __array_ufunc__ = None  # make ndarray <op> Value dispatch to the reflected Value method

    def __init__(self, tape: Tape, node_id: int):
        self.tape = tape
        self.id = node_id

    @property
    def data(self) -> np.ndarray:
        return self.tape.nodes[self.id].data

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Value(id={self.id}, shape={self.shape})"

    def _lift(self, other: ArrayLike) -> Value:
        if isinstance(other, Value):
            return other
        return self.tape.constant(other)

    # ── Arithmetic ───────────────────────────────────────────

    def __add__(self, other: ArrayLike) -> Value:
        if isinstance(other, Real):
            return shift(self, float(other))
        other = self._lift(other)
        if other.shape != self.shape and self.ndim == 2 and other.ndim in (1, 2):
            return broadcast_add(self, other)
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other: ArrayLike) -> Value:
        if isinstance(other, Real):
            return shift(self, -float(other))
        return sub(self, self._lift(other))

    def __rsub__(self, other: ArrayLike) -> Value:
        if isinstance(other, Real):
            return shift(scale(self, -1.0), float(other))
        return sub(self._lift(other), self)

    def __mul__(self, other: ArrayLike) -> Value:
        if isinstance(other, Real):
            return scale(self, float(other))
        return mul(self, self._lift(other))

    __rmul__ = __mul__

    def __truediv__(self, other: ArrayLike) -> Value:
        if isinstance(other, Real):
            return scale(self, 1.0 / float(other))
        return mul(self, reciprocal(self._lift(other)))

    def __rtruediv__(self, other: ArrayLike) -> Value:
        if isinstance(other, Real):
            return scale(reciprocal(self), float(other))
        return mul(self._lift(other), reciprocal(self))

    def __neg__(self) -> Value:
        return scale(self, -1.0)

    def __pow__(self, exponent: int) -> Value:
        if exponent != 2:
            raise ValueError(f"pow: only squaring is supported, got exponent {exponent}")
        return square(self)

    def __matmul__(self, other: ArrayLike) -> Value:
        return matmul(self, self._lift(other))

    def __rmatmul__(self, other: ArrayLike) -> Value:
        return matmul(self._lift(other), self)

    def __getitem__(self, index: Any) -> Value:
        if not isinstance(index, tuple):
            index = (index,)
        return self.tape.record("getitem", self, index=index)

    def reshape(self, *shape: int | tuple[int, ...]) -> Value:
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, tuple(int(s) for s in shape))  # type: ignore[arg-type]

    def sum(self) -> Value:
        return sum_(self)

    def mean(self) -> Value:
        return mean(self)


# ── Functional interface ─────────────────────────────────────


def record(kind: str, *inputs: Value, **attrs: Any) -> Value:
    return inputs[0].tape.record(kind, *inputs, **attrs)


def matmul(a: Value, b: Value) -> Value:
    return record("matmul", a, b)


def add(a: Value, b: Value) -> Value:
    return record("add", a, b)


def sub(a: Value, b: Value) -> Value:
    return record("sub", a, b)


def broadcast_add(a: Value, b: Value) -> Value:
    return record("broadcast_add", a, b)


def mul(a: Value, b: Value) -> Value:
    return record("mul", a, b)


def tanh(a: Value) -> Value:
    return record("tanh", a)


def logistic(a: Value) -> Value:
    return record("logistic", a)


def exp(a: Value) -> Value:
    return record("exp", a)


def square(a: Value) -> Value:
    return record("square", a)


def reciprocal(a: Value) -> Value:
    return record("reciprocal", a)


def sum_(a: Value) -> Value:
    return record("sum", a)


def mean(a: Value) -> Value:
    return record("mean", a)


def relu(a: Value) -> Value:
    return record("relu", a)


def scale(a: Value, factor: float) -> Value:
    return record("scale", a, factor=float(factor))


def shift(a: Value, offset: float) -> Value:
    return record("shift", a, offset=float(offset))


def reshape(a: Value, shape: tuple[int, ...]) -> Value:
    return record("reshape", a, shape=shape)


def concat(values: list[Value], axis: int = 0) -> Value:
    return record("concat", *values, axis=axis)


def backward(loss: Value) -> GradientMap:
    return loss.tape.backward(loss)


def grad_check(f: Callable[[Value], Value | float], theta: ArrayLike, h: float = 1e-5, floor: float = 1e-10) -> float:
    """Worst componentwise relative error between ``backward`` and central differences.

    ``f`` receives a parameter leaf on a fresh tape and returns a scalar.
    """
    if h <= 0:
        raise ValueError("grad_check: step h must be positive")
    theta = np.array(theta, dtype=np.float64)

    tape = Tape()
    leaf = tape.parameter(theta)
    out = f(leaf)
    if isinstance(out, Value):
        if not np.isfinite(out.data).all():
            raise FloatingPointError("grad_check: non-finite objective at the base point")
        analytic = tape.backward(out)[leaf]
    else:
        analytic = np.zeros_like(theta)

    numeric = np.zeros_like(theta)
    for index in np.ndindex(theta.shape):
        plus = theta.copy()
        minus = theta.copy()
        plus[index] += h
        minus[index] -= h
        f_plus = _evaluate(f, plus)
        f_minus = _evaluate(f, minus)
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise FloatingPointError(f"grad_check: non-finite objective at component {index}")
        numeric[index] = (f_plus - f_minus) / (2.0 * h)

    if theta.size == 0:
        return 0.0
    denominator = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denominator))


def _evaluate(f: Callable[[Value], Value | float], theta: np.ndarray) -> float:
    out = f(Tape().parameter(theta))
    return float(out.data) if isinstance(out, Value) else float(out)
