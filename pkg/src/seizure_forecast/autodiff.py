"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Graphs are built define-by-run: every operation returns a new :class:`Tensor`
that remembers its inputs and a closure mapping the output gradient to input
gradients.  Node ids come from a process-wide counter, so the creation order
of nodes is always a valid topological order of the graph.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ContractError, DimensionError, NumericError

LOG_FLOOR = 1e-12

_node_ids = itertools.count()

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """A node in a computation graph.

    ``data`` is always a float64 array.  ``grad`` is filled in by
    :func:`backward` for tensors with ``requires_grad`` set.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id", "op", "parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_ids)
        self.op = "leaf"
        self.parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], op: str, backward_fn: BackwardFn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.node_id = next(_node_ids)
    out.op = op
    out.parents = tuple(parents)
    out.requires_grad = any(p.requires_grad for p in parents)
    out._backward = backward_fn if out.requires_grad else None
    out.name = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {list(a.shape)} and {list(b.shape)} are not compatible") from None


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), "add", bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), "sub", bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), "mul", bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), "neg", lambda g: (-g,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), "relu", lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = expit(a.data)
    return _result(s, (a,), "sigmoid", lambda g: (g * s * (1.0 - s),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _result(t, (a,), "tanh", lambda g: (g * (1.0 - t * t),))


def log(a) -> Tensor:
    """Natural log with the input clamped to at least ``LOG_FLOOR``.

    Inside the clamped region the function is constant, so its gradient is 0.
    """
    a = as_tensor(a)
    live = a.data >= LOG_FLOOR
    x = np.maximum(a.data, LOG_FLOOR)
    return _result(np.log(x), (a,), "log", lambda g: (np.where(live, g / x, 0.0),))


_UNARY = {"neg": neg, "relu": relu, "sigmoid": sigmoid, "tanh": tanh, "log": log}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op_kind: str, a, b=None) -> Tensor:
    if op_kind in _BINARY:
        if b is None:
            raise ContractError(f"{op_kind} needs two operands")
        return _BINARY[op_kind](a, b)
    if op_kind in _UNARY:
        return _UNARY[op_kind](a)
    raise ContractError(f"unknown elementwise op {op_kind!r}")


# ---------------------------------------------------------------------------
# linear algebra and reductions
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {list(a.shape)} and {list(b.shape)}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {list(a.shape)} @ {list(b.shape)}")

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _result(a.data @ b.data, (a, b), "matmul", bw)


def _check_axis(a: Tensor, axis: int | None) -> int | None:
    if axis is None:
        return None
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {list(a.shape)}")
    return axis % a.ndim


def reduce(op_kind: str, a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    axis = _check_axis(a, axis)
    if op_kind == "sum":
        def bw(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)

        return _result(np.asarray(a.data.sum(axis=axis)), (a,), "sum", bw)

    if op_kind == "mean":
        count = a.size if axis is None else a.shape[axis]

        def bw(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g / count, a.shape).copy(),)

        return _result(np.asarray(a.data.mean(axis=axis)), (a,), "mean", bw)

    if op_kind == "max":
        # argmax picks the first maximal index, which fixes the tie rule.
        if axis is None:
            idx = int(np.argmax(a.data))
            out = np.asarray(a.data.reshape(-1)[idx])

            def bw(g):
                full = np.zeros(a.size)
                full[idx] = g
                return (full.reshape(a.shape),)

            return _result(out, (a,), "max", bw)

        idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
        out = np.take_along_axis(a.data, idx, axis=axis).squeeze(axis)

        def bw(g):
            full = np.zeros(a.shape)
            np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
            return (full,)

        return _result(out, (a,), "max", bw)

    raise ContractError(f"unknown reduction {op_kind!r}")


def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001
    return reduce("sum", a, axis)


def mean(a, axis: int | None = None) -> Tensor:
    return reduce("mean", a, axis)


def max(a, axis: int | None = None) -> Tensor:  # noqa: A001
    return reduce("max", a, axis)


# ---------------------------------------------------------------------------
# structural ops
# ---------------------------------------------------------------------------


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {list(a.shape)} into {list(shape)}") from None
    return _result(out, (a,), "reshape", lambda g: (g.reshape(a.shape),))


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), "transpose", lambda g: (g.transpose(inverse),))


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(Ellipsis))) or i is None for i in items)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    basic = _is_basic_index(index)

    def bw(g):
        full = np.zeros(a.shape)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _result(np.array(a.data[index]), (a,), "getitem", bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [list(t.shape) for t in tensors]
        raise DimensionError(f"concat along axis {axis}: incompatible shapes {shapes}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, tensors, "concat", bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [list(t.shape) for t in tensors]
        raise DimensionError(f"stack: incompatible shapes {shapes}") from None

    lead = (slice(None),) * (axis % out.ndim)

    def bw(g):
        return tuple(g[lead + (i,)] for i in range(len(tensors)))

    return _result(out, tensors, "stack", bw)


# ---------------------------------------------------------------------------
# graph traversal
# ---------------------------------------------------------------------------


@dataclass
class Graph:
    """Nodes reachable from an output, in insertion (= topological) order."""

    nodes: list[Tensor] = field(default_factory=list)
    edges: dict[int, tuple[str, tuple[int, ...]]] = field(default_factory=dict)

    @classmethod
    def from_output(cls, output: Tensor, grad_only: bool = False) -> "Graph":
        seen: dict[int, Tensor] = {}
        stack_ = [output]
        while stack_:
            node = stack_.pop()
            if node.node_id in seen or (grad_only and not node.requires_grad):
                continue
            seen[node.node_id] = node
            stack_.extend(node.parents)
        nodes = [seen[k] for k in sorted(seen)]
        edges = {n.node_id: (n.op, tuple(p.node_id for p in n.parents)) for n in nodes if n.parents}
        return cls(nodes, edges)


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Propagate d(loss)/d(node) through the graph below ``loss``.

    Returns a map from node id to gradient for every node that requires a
    gradient.  Leaf tensors also get their ``grad`` attribute set (replacing
    any previous value).
    """
    if loss.size != 1 or loss.ndim > 1:
        raise ContractError(f"backward needs a scalar loss, got shape {list(loss.shape)}")
    graph = Graph.from_output(loss, grad_only=True)
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones(loss.shape)}
    for node in reversed(graph.nodes):
        g = grads.get(node.node_id)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(parent.node_id)
            grads[parent.node_id] = pg if prev is None else prev + pg
    return grads


def gradient_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` rebuilds the graph from ``inputs`` and returns a scalar tensor.
    The relative error per element is
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    if not 0 < epsilon <= 1e-2:
        raise ContractError(f"epsilon must lie in (0, 1e-2], got {epsilon}")
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = f(*inputs)
    _check_finite(out, "output")
    backward(out)
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros(t.shape)
        _check_finite_array(analytic, f"gradient of {t.name or t.node_id}")
        flat = t.data.reshape(-1)
        flat_grad = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            plus = f(*inputs)
            flat[i] = orig - epsilon
            minus = f(*inputs)
            flat[i] = orig
            _check_finite(plus, f"output with {t.name or t.node_id}[{i}] perturbed")
            _check_finite(minus, f"output with {t.name or t.node_id}[{i}] perturbed")
            numeric = (plus.item() - minus.item()) / (2.0 * epsilon)
            a = flat_grad[i]
            err = abs(a - numeric) / np.maximum(1e-8, abs(a) + abs(numeric))
            worst = err if err > worst else worst
    return float(worst)


def _check_finite(t: Tensor, what: str) -> None:
    if np.all(np.isfinite(t.data)):
        return
    # name the earliest node (in topological order) that produced a non-finite value
    for node in Graph.from_output(t).nodes:
        if not np.all(np.isfinite(node.data)):
            label = f" {node.name!r}" if node.name else ""
            raise NumericError(f"non-finite value in {what}: first at node {node.node_id} ({node.op}{label})")
    raise NumericError(f"non-finite value in {what}")


def _check_finite_array(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite value in {what}")
