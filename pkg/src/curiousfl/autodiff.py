"""Reverse-mode differentiation over dense float64 arrays.

Every primitive's vector-Jacobian product is itself written in terms of
primitives, so gradients computed with ``create_graph=True`` can be
differentiated again.  That "double backward" is what gradient inversion
needs: the matching loss ``||grad_w loss(w; x) - g||^2`` is differentiated
with respect to the dummy input ``x``.

Two layers are exposed:

* :class:`Tensor` and :func:`grad` -- define-by-run, used by the model and
  the attack code.
* :class:`ExprGraph`, :func:`evaluate` and :func:`backward` -- a frozen,
  topologically ordered record of a traced computation that can be replayed
  with new leaf bindings.

The operation set is deliberately closed; there is no general broadcasting
beyond what bias addition and grouped matmuls need.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, ContractError, NumericError

__all__ = [
    "Tensor",
    "ExprGraph",
    "GraphRun",
    "as_tensor",
    "backward",
    "evaluate",
    "grad",
    "input_grad_of_grad_match",
    "no_grad",
]

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def _grad_mode(enabled: bool):
    prev = _grad_enabled()
    _state.enabled = enabled
    try:
        yield
    finally:
        _state.enabled = prev


def no_grad():
    """Context manager that stops operations from being recorded."""
    return _grad_mode(False)


class Tensor:
    """A float64 array plus the operation that produced it."""

    __slots__ = ("value", "requires_grad", "op", "inputs", "attrs")
    __array_priority__ = 100

    def __init__(self, value, requires_grad=False, op=None, inputs=(), attrs=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.op = op
        self.inputs = inputs
        self.attrs = attrs or {}

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        kind = self.op.name if self.op is not None else "leaf"
        return f"Tensor({kind}, shape={self.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    def item(self) -> float:
        return float(self.value)

    # arithmetic
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        n = self.value.size if axis is None else _axis_size(self.shape, axis)
        return tsum(self, axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def mT(self):
        return swap_last(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _axis_size(shape, axis):
    axes = (axis,) if isinstance(axis, int) else axis
    n = 1
    for a in axes:
        n *= shape[a]
    return n


# ---------------------------------------------------------------------------
# primitives


class Op:
    """A primitive: numpy forward plus a vjp expressed with primitives."""

    name = "op"

    @staticmethod
    def forward(*values, **attrs):
        raise NotImplementedError

    @staticmethod
    def vjp(g, out, *inputs, **attrs):
        raise NotImplementedError


_OPS: dict[str, type] = {}


def _register(cls):
    _OPS[cls.name] = cls
    return cls


def apply(op, *inputs, **attrs) -> Tensor:
    tensors = tuple(as_tensor(t) for t in inputs)
    try:
        # non-finite results are reported below, so numpy's warnings are noise
        with np.errstate(all="ignore"):
            value = op.forward(*(t.value for t in tensors), **attrs)
    except ValueError as exc:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise ConfigError(f"{op.name}: incompatible shapes ({shapes}): {exc}") from exc
    value = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite value produced by operation '{op.name}'")
    if _grad_enabled() and any(t.requires_grad for t in tensors):
        return Tensor(value, True, op, tensors, attrs)
    return Tensor(value)


def _unbroadcast(g: Tensor, shape) -> Tensor:
    if g.shape == tuple(shape):
        return g
    return apply(SumTo, g, shape=tuple(shape))


@_register
class Add(Op):
    name = "add"
    forward = staticmethod(np.add)

    @staticmethod
    def vjp(g, out, a, b):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


@_register
class Sub(Op):
    name = "sub"
    forward = staticmethod(np.subtract)

    @staticmethod
    def vjp(g, out, a, b):
        return _unbroadcast(g, a.shape), _unbroadcast(neg(g), b.shape)


@_register
class Mul(Op):
    name = "mul"
    forward = staticmethod(np.multiply)

    @staticmethod
    def vjp(g, out, a, b):
        ga = _unbroadcast(g * b, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a, b.shape) if b.requires_grad else None
        return ga, gb


@_register
class Div(Op):
    name = "div"
    forward = staticmethod(np.divide)

    @staticmethod
    def vjp(g, out, a, b):
        ga = _unbroadcast(g / b, a.shape) if a.requires_grad else None
        gb = _unbroadcast(neg(g * out / b), b.shape) if b.requires_grad else None
        return ga, gb


@_register
class Neg(Op):
    name = "neg"
    forward = staticmethod(np.negative)

    @staticmethod
    def vjp(g, out, a):
        return (neg(g),)


@_register
class MatMul(Op):
    name = "matmul"

    @staticmethod
    def forward(a, b):
        if a.ndim < 2 or b.ndim < 2:
            raise ValueError("matmul operands must be at least 2-D")
        return np.matmul(a, b)

    @staticmethod
    def vjp(g, out, a, b):
        ga = _unbroadcast(matmul(g, swap_last(b)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(matmul(swap_last(a), g), b.shape) if b.requires_grad else None
        return ga, gb


@_register
class SwapLast(Op):
    name = "swap_last"

    @staticmethod
    def forward(a):
        return np.swapaxes(a, -1, -2)

    @staticmethod
    def vjp(g, out, a):
        return (swap_last(g),)


@_register
class Reshape(Op):
    name = "reshape"

    @staticmethod
    def forward(a, shape):
        return np.reshape(a, shape)

    @staticmethod
    def vjp(g, out, a, shape):
        return (reshape(g, a.shape),)


@_register
class Sum(Op):
    name = "sum"

    @staticmethod
    def forward(a, axis=None, keepdims=False):
        return np.sum(a, axis=axis, keepdims=keepdims)

    @staticmethod
    def vjp(g, out, a, axis=None, keepdims=False):
        if not keepdims and axis is not None:
            axes = (axis,) if isinstance(axis, int) else axis
            axes = sorted(ax % a.ndim for ax in axes)
            shape = list(g.shape)
            for ax in axes:
                shape.insert(ax, 1)
            g = reshape(g, tuple(shape))
        elif not keepdims:
            g = reshape(g, (1,) * a.ndim)
        return (apply(BroadcastTo, g, shape=a.shape),)


@_register
class BroadcastTo(Op):
    name = "broadcast_to"

    @staticmethod
    def forward(a, shape):
        return np.array(np.broadcast_to(a, shape))

    @staticmethod
    def vjp(g, out, a, shape):
        return (_unbroadcast(g, a.shape),)


@_register
class SumTo(Op):
    """Sum a broadcast array back down to ``shape``."""

    name = "sum_to"

    @staticmethod
    def forward(a, shape):
        lead = a.ndim - len(shape)
        if lead < 0:
            raise ValueError(f"cannot reduce {a.shape} to {shape}")
        axes = tuple(range(lead)) + tuple(
            lead + i for i, n in enumerate(shape) if n == 1 and a.shape[lead + i] != 1
        )
        r = np.sum(a, axis=axes, keepdims=True) if axes else a
        return np.reshape(r, shape)

    @staticmethod
    def vjp(g, out, a, shape):
        return (apply(BroadcastTo, g, shape=a.shape),)


@_register
class Relu(Op):
    name = "relu"

    @staticmethod
    def forward(a):
        return np.maximum(a, 0.0)

    @staticmethod
    def vjp(g, out, a):
        # constant mask: second derivative is 0, including at exactly 0
        return (g * Tensor((a.value > 0).astype(np.float64)),)


@_register
class Sigmoid(Op):
    name = "sigmoid"

    @staticmethod
    def forward(a):
        # split by sign so exp never overflows
        out = np.empty_like(a)
        pos = a >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
        e = np.exp(a[~pos])
        out[~pos] = e / (1.0 + e)
        return out

    @staticmethod
    def vjp(g, out, a):
        return (g * out * (1.0 - out),)


@_register
class Tanh(Op):
    name = "tanh"
    forward = staticmethod(np.tanh)

    @staticmethod
    def vjp(g, out, a):
        return (g * (1.0 - out * out),)


@_register
class Exp(Op):
    name = "exp"
    forward = staticmethod(np.exp)

    @staticmethod
    def vjp(g, out, a):
        return (g * out,)


@_register
class Log(Op):
    name = "log"
    forward = staticmethod(np.log)

    @staticmethod
    def vjp(g, out, a):
        return (g / a,)


@_register
class Sqrt(Op):
    name = "sqrt"
    forward = staticmethod(np.sqrt)

    @staticmethod
    def vjp(g, out, a):
        return (g * 0.5 / out,)


@_register
class Abs(Op):
    name = "abs"
    forward = staticmethod(np.abs)

    @staticmethod
    def vjp(g, out, a):
        return (g * Tensor(np.sign(a.value)),)


@_register
class LogSoftmax(Op):
    name = "log_softmax"

    @staticmethod
    def forward(a, axis=-1):
        shifted = a - np.max(a, axis=axis, keepdims=True)
        return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))

    @staticmethod
    def vjp(g, out, a, axis=-1):
        return (g - exp(out) * tsum(g, axis=axis, keepdims=True),)


@_register
class GetItem(Op):
    name = "getitem"

    @staticmethod
    def forward(a, index):
        return np.array(a[index])

    @staticmethod
    def vjp(g, out, a, index):
        return (apply(IndexPut, g, index=index, shape=a.shape),)


@_register
class IndexPut(Op):
    """Zeros of ``shape`` with ``a`` written at ``index`` (basic indexing)."""

    name = "index_put"

    @staticmethod
    def forward(a, index, shape):
        out = np.zeros(shape)
        out[index] = a
        return out

    @staticmethod
    def vjp(g, out, a, index, shape):
        return (getitem(g, index),)


@_register
class Take(Op):
    """Gather along the last axis with an integer index array."""

    name = "take"

    @staticmethod
    def forward(a, idx):
        return np.take(a, idx, axis=-1)

    @staticmethod
    def vjp(g, out, a, idx):
        return (apply(ScatterAdd, g, idx=idx, size=a.shape[-1]),)


@_register
class ScatterAdd(Op):
    """Adjoint of :class:`Take`: accumulate into a last axis of ``size``."""

    name = "scatter_add"

    @staticmethod
    def forward(a, idx, size):
        lead = a.shape[: a.ndim - idx.ndim]
        flat = a.reshape(lead + (idx.size,))
        out = np.zeros((size,) + lead)
        np.add.at(out, idx.ravel(), np.moveaxis(flat, -1, 0))
        return np.moveaxis(out, 0, -1)

    @staticmethod
    def vjp(g, out, a, idx, size):
        return (take(g, idx),)


@_register
class Concat(Op):
    """Concatenate along the first axis."""

    name = "concat"

    @staticmethod
    def forward(*values):
        return np.concatenate(values, axis=0)

    @staticmethod
    def vjp(g, out, *inputs):
        parts = []
        start = 0
        for t in inputs:
            n = t.shape[0]
            parts.append(getitem(g, slice(start, start + n)) if t.requires_grad else None)
            start += n
        return tuple(parts)


def concat(tensors):
    return apply(Concat, *tensors)


def add(a, b):
    return apply(Add, a, b)


def sub(a, b):
    return apply(Sub, a, b)


def mul(a, b):
    return apply(Mul, a, b)


def div(a, b):
    return apply(Div, a, b)


def neg(a):
    return apply(Neg, a)


def matmul(a, b):
    return apply(MatMul, a, b)


def swap_last(a):
    return apply(SwapLast, a)


def reshape(a, shape):
    return apply(Reshape, a, shape=tuple(shape))


def tsum(a, axis=None, keepdims=False):
    return apply(Sum, a, axis=axis, keepdims=keepdims)


def broadcast_to(a, shape):
    return apply(BroadcastTo, a, shape=tuple(shape))


def relu(a):
    return apply(Relu, a)


def sigmoid(a):
    return apply(Sigmoid, a)


def tanh(a):
    return apply(Tanh, a)


def exp(a):
    return apply(Exp, a)


def log(a):
    return apply(Log, a)


def sqrt(a):
    return apply(Sqrt, a)


def tabs(a):
    return apply(Abs, a)


def log_softmax(a, axis=-1):
    return apply(LogSoftmax, a, axis=axis)


def softmax(a, axis=-1):
    return exp(log_softmax(a, axis=axis))


def getitem(a, index):
    return apply(GetItem, a, index=index)


def take(a, idx):
    return apply(Take, a, idx=np.asarray(idx, dtype=np.intp))


def square_norm(a):
    return tsum(a * a)


def soft_cross_entropy(logits, target_probs):
    """Mean over the batch of ``-sum_c t_c log softmax(logits)_c``."""
    logp = log_softmax(logits, axis=-1)
    per_example = neg(tsum(logp * target_probs, axis=-1))
    return per_example.mean(axis=-1)


def label_logit_cross_entropy(logits, label_logits):
    """Cross-entropy against soft labels given as unnormalised logits."""
    return soft_cross_entropy(logits, softmax(label_logits, axis=-1))


# ---------------------------------------------------------------------------
# reverse sweep


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.inputs:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def grad(output: Tensor, inputs: Sequence[Tensor], create_graph: bool = False) -> list[Tensor]:
    """Gradients of a scalar ``output`` with respect to ``inputs``.

    Inputs that ``output`` does not depend on get zero gradients.  With
    ``create_graph=True`` the returned tensors are themselves differentiable.
    """
    if output.value.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {output.shape}")
    grads: dict[int, Tensor] = {}
    wanted = {id(t) for t in inputs}
    if output.requires_grad:
        grads[id(output)] = Tensor(np.ones_like(output.value))
        with _grad_mode(create_graph):
            for node in reversed(_topo_order(output)):
                if node.op is None:
                    continue
                g = grads.get(id(node)) if id(node) in wanted else grads.pop(id(node), None)
                if g is None:
                    continue
                parts = node.op.vjp(g, node, *node.inputs, **node.attrs)
                for parent, pg in zip(node.inputs, parts):
                    if pg is None or not parent.requires_grad:
                        continue
                    prev = grads.get(id(parent))
                    grads[id(parent)] = pg if prev is None else add(prev, pg)
    out = []
    for t in inputs:
        g = grads.get(id(t))
        out.append(g if g is not None else Tensor(np.zeros_like(t.value)))
    return out


# ---------------------------------------------------------------------------
# frozen graphs


@dataclass(frozen=True)
class Node:
    kind: str  # "leaf", "const" or a primitive name
    operands: tuple[int, ...] = ()
    attrs: tuple[tuple[str, Any], ...] = ()
    const: np.ndarray | None = None


@dataclass(frozen=True)
class ExprGraph:
    """Topologically ordered DAG: every operand id precedes its node."""

    nodes: tuple[Node, ...]
    leaves: tuple[int, ...]
    root: int

    @classmethod
    def trace(cls, fn: Callable[..., Tensor], *example_leaves) -> "ExprGraph":
        """Record ``fn`` applied to leaves shaped like ``example_leaves``."""
        leaves = [Tensor(np.array(v, dtype=np.float64), requires_grad=True) for v in example_leaves]
        root = fn(*leaves)
        if not isinstance(root, Tensor):
            raise ContractError("traced function must return a Tensor")
        ids: dict[int, int] = {}
        nodes: list[Node] = []
        for i, leaf in enumerate(leaves):
            ids[id(leaf)] = i
            nodes.append(Node("leaf"))

        def visit(t: Tensor) -> int:
            if id(t) in ids:
                return ids[id(t)]
            stack = [(t, False)]
            while stack:
                cur, expanded = stack.pop()
                if id(cur) in ids:
                    continue
                if cur.op is None:
                    ids[id(cur)] = len(nodes)
                    nodes.append(Node("const", const=cur.value.copy()))
                    continue
                if not expanded:
                    stack.append((cur, True))
                    stack.extend((p, False) for p in cur.inputs if id(p) not in ids)
                    continue
                operands = tuple(ids[id(p)] for p in cur.inputs)
                ids[id(cur)] = len(nodes)
                nodes.append(Node(cur.op.name, operands, tuple(sorted(cur.attrs.items()))))
            return ids[id(t)]

        root_id = visit(root)
        return cls(tuple(nodes), tuple(range(len(leaves))), root_id)


@dataclass
class GraphRun:
    """One evaluation of an :class:`ExprGraph`; owns its node values."""

    graph: ExprGraph
    tensors: list[Tensor]

    @property
    def value(self) -> np.ndarray:
        return self.tensors[self.graph.root].value

    @property
    def values(self) -> list[np.ndarray]:
        return [t.value for t in self.tensors]


def evaluate(graph: ExprGraph, bindings: Mapping[int, np.ndarray]) -> GraphRun:
    """Replay ``graph`` with leaf values from ``bindings``."""
    missing = [i for i in graph.leaves if i not in bindings]
    if missing:
        raise ContractError(f"unbound leaves: {missing}")
    tensors: list[Tensor] = []
    for nid, node in enumerate(graph.nodes):
        if node.kind == "leaf":
            tensors.append(Tensor(np.array(bindings[nid], dtype=np.float64), requires_grad=True))
        elif node.kind == "const":
            tensors.append(Tensor(node.const))
        else:
            try:
                t = apply(_OPS[node.kind], *(tensors[i] for i in node.operands), **dict(node.attrs))
            except NumericError as exc:
                raise NumericError(f"node {nid} ({node.kind}): {exc}") from exc
            tensors.append(t)
    return GraphRun(graph, tensors)


def backward(run: GraphRun, root: int | None = None) -> dict[int, np.ndarray]:
    """Gradient of the (scalar) root with respect to every leaf."""
    root = run.graph.root if root is None else root
    leaves = [run.tensors[i] for i in run.graph.leaves]
    gs = grad(run.tensors[root], leaves)
    return {i: g.value for i, g in zip(run.graph.leaves, gs)}


# ---------------------------------------------------------------------------


def input_grad_of_grad_match(
    forward: Callable[[Tensor, Tensor], Tensor],
    params: np.ndarray,
    x: np.ndarray,
    labels: np.ndarray,
    target: np.ndarray,
    loss: Callable[[Tensor, Tensor], Tensor] = label_logit_cross_entropy,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Value and input-gradient of ``||grad_w loss(forward(w, x), labels) - target||^2``.

    Returns ``(matching_loss, d/dx, d/dlabels)``.  The derivative is a true
    second-order quantity, obtained by differentiating through the recorded
    parameter-gradient computation.
    """
    params = np.asarray(params, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if target.shape != params.shape:
        raise ContractError(f"target gradient has shape {target.shape}, parameters {params.shape}")
    w = Tensor(params, requires_grad=True)
    xt = Tensor(x, requires_grad=True)
    lt = Tensor(labels, requires_grad=True)
    (gw,) = grad(loss(forward(w, xt), lt), [w], create_graph=True)
    diff = gw - target
    match = tsum(diff * diff)
    gx, gl = grad(match, [xt, lt])
    return match.item(), gx.value, gl.value
