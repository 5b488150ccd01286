"""Reverse-mode automatic differentiation over dense float64 tensors.

The engine is a dynamic tape: every differentiable operation appends one
record to the :class:`Graph` that owns its operands, and ``backward`` walks
the records in exact reverse order, so the visit order is a valid reverse
topological order by construction. A Graph also acts as the parameter
registry for a model; leaf tensors that require gradients must be created
through it (``graph.parameter`` / ``graph.tensor``) so that every tensor
belongs to exactly one graph.

Broadcasting follows the numpy trailing-axis rule (shapes align from the
right, size-1 axes expand); gradients of broadcast operands are reduced
back to the operand shape by summation.

Notes:
  - ``backward`` accumulates into ``.grad`` additively and leaves the tape
    in place; call ``graph.clear()`` between training steps to free it.
  - Externally differentiated operations (e.g. a quantum circuit whose
    gradient comes from the parameter-shift rule) join the tape through
    :func:`custom`.
"""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError


class Tensor:
    """Dense float64 array with an optional gradient buffer.

    Plain ``Tensor(data)`` creates a free constant. Gradient-carrying
    leaves are created via ``Graph.parameter`` or ``Graph.tensor``.
    """

    __slots__ = ("data", "grad", "requires_grad", "graph", "node_id", "_leaf")

    def __init__(self, data, requires_grad: bool = False):
        if requires_grad:
            raise ContractError(
                "gradient-carrying tensors must be created through a Graph "
                "(use graph.tensor or graph.parameter)")
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = False
        self.graph: Optional["Graph"] = None
        self.node_id: Optional[int] = None
        self._leaf = True

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; scalars and arrays are wrapped as constants.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))


class _Record:
    __slots__ = ("out_id", "parents", "fn")

    def __init__(self, out_id, parents, fn):
        self.out_id = out_id
        self.parents = parents
        self.fn = fn


class Graph:
    """Tape plus parameter registry.

    Records accumulate during the forward pass; ``backward`` consumes them
    (without freeing, so a second backward doubles gradients exactly) and
    ``clear`` drops them. Parameters are named leaf tensors used by the
    optimizer and the checkpoint format; registration order is preserved.
    """

    def __init__(self):
        self._records: list[_Record] = []
        self.params: dict[str, Tensor] = {}
        self._recording = True
        self._next_id = 0

    # -- tensor creation -------------------------------------------------

    def tensor(self, data, requires_grad: bool = False) -> Tensor:
        t = Tensor(data)
        t.requires_grad = bool(requires_grad)
        self._bind(t)
        return t

    def parameter(self, name: str, data, requires_grad: bool = True) -> Tensor:
        if name in self.params:
            raise ContractError(f"parameter {name!r} already registered")
        t = self.tensor(data, requires_grad=requires_grad)
        self.params[name] = t
        return t

    def _bind(self, t: Tensor):
        t.graph = self
        t.node_id = self._next_id
        self._next_id += 1

    # -- recording -------------------------------------------------------

    def no_grad(self):
        """Context manager suppressing tape recording (evaluation mode)."""
        return _NoGrad(self)

    def _append(self, out: Tensor, parents, fn):
        self._bind(out)
        out.requires_grad = True
        out._leaf = False
        self._records.append(_Record(out.node_id, tuple(parents), fn))

    # -- backward --------------------------------------------------------

    def backward(self, loss: Tensor):
        """Accumulate d(loss)/d(leaf) into every reachable leaf's .grad."""
        if loss.graph is not self:
            raise ContractError("loss does not belong to this graph")
        if loss.data.size != 1:
            raise ContractError(
                f"backward requires a scalar loss, got shape {loss.data.shape}")
        if loss._leaf:
            if loss.requires_grad:
                _leaf_accumulate(loss, np.ones_like(loss.data))
            return
        grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
        owned: set[int] = set()  # ids whose buffer is safe to add into in place
        for rec in reversed(self._records):
            gout = grads.pop(rec.out_id, None)
            if gout is None:
                continue
            owned.discard(rec.out_id)
            for parent, pgrad in zip(rec.parents, rec.fn(gout)):
                if pgrad is None or not parent.requires_grad:
                    continue
                # A contribution is either a dense array or a sparse
                # (index, slice) pair touching part of the parent.
                if type(pgrad) is tuple:
                    index, part = pgrad
                    if parent._leaf:
                        if parent.grad is None:
                            parent.grad = np.zeros_like(parent.data)
                        parent.grad[index] += part
                        continue
                    acc = grads.get(parent.node_id)
                    if acc is None:
                        acc = np.zeros(parent.data.shape)
                        grads[parent.node_id] = acc
                        owned.add(parent.node_id)
                    elif parent.node_id not in owned:
                        acc = acc.copy()
                        grads[parent.node_id] = acc
                        owned.add(parent.node_id)
                    acc[index] += part
                    continue
                if parent._leaf:
                    _leaf_accumulate(parent, pgrad)
                    continue
                acc = grads.get(parent.node_id)
                if acc is None:
                    grads[parent.node_id] = pgrad
                elif parent.node_id in owned:
                    acc += pgrad
                else:
                    grads[parent.node_id] = acc + pgrad
                    owned.add(parent.node_id)

    def clear(self):
        """Free the tape. Parameters and their gradients are untouched."""
        self._records.clear()

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    @property
    def num_records(self) -> int:
        return len(self._records)


class _NoGrad:
    def __init__(self, graph: Graph):
        self._graph = graph
        self._prev = True

    def __enter__(self):
        self._prev = self._graph._recording
        self._graph._recording = False
        return self

    def __exit__(self, *exc):
        self._graph._recording = self._prev
        return False


def _leaf_accumulate(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _common_graph(tensors: Sequence[Tensor]) -> Optional[Graph]:
    graph = None
    for t in tensors:
        if t.graph is None:
            continue
        if graph is None:
            graph = t.graph
        elif graph is not t.graph:
            raise ContractError("operands belong to different graphs")
    return graph


def _emit(data: np.ndarray, parents: Sequence[Tensor], fn) -> Tensor:
    """Create the op output, recording it when gradients are in play."""
    out = Tensor(data)
    graph = _common_graph(parents)
    if graph is not None and graph._recording and any(p.requires_grad for p in parents):
        graph._append(out, parents, fn)
    return out


def custom(data, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Insert an externally differentiated operation into the tape.

    ``backward_fn(gout)`` must return one gradient array (or None) per
    parent, each matching the parent's shape.
    """
    return _emit(np.asarray(data, dtype=np.float64), parents, backward_fn)


# -- broadcasting helpers ------------------------------------------------

def _broadcast_check(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise DimensionError(
            f"{op}: shapes {a.data.shape} and {b.data.shape} do not broadcast") from None


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- primitive operations ------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "add")

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _emit(a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "sub")

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _emit(a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "mul")

    def bwd(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _emit(a.data * b.data, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "div")
    out = a.data / b.data

    def bwd(g):
        return (_unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * out / b.data, b.data.shape))

    return _emit(out, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    return _emit(-a.data, (a,), lambda g: (-g,))


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; ties route the gradient to the first operand."""
    _broadcast_check(a, b, "maximum")
    take_a = a.data >= b.data

    def bwd(g):
        return (_unbroadcast(np.where(take_a, g, 0.0), a.data.shape),
                _unbroadcast(np.where(take_a, 0.0, g), b.data.shape))

    return _emit(np.maximum(a.data, b.data), (a, b), bwd)


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _emit(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bwd(g):
        return (np.where(mask, g, 0.0),)

    return _emit(np.where(mask, a.data, 0.0), (a,), bwd)


def square(a: Tensor) -> Tensor:
    return _emit(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _emit(out, (a,), lambda g: (g * out,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _emit(out, (a,), lambda g: (g * (1.0 - out * out),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a [..., k] stack against a 2-D [k, n] matrix."""
    if b.data.ndim != 2 or a.data.ndim < 1 or a.data.shape[-1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul: shapes {a.data.shape} and {b.data.shape} do not conform")
    k, n = b.data.shape

    def bwd(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
        return ga, gb

    return _emit(a.data @ b.data, (a, b), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    c = x.data.shape[-1] if x.data.ndim else 0
    if c == 0:
        raise DimensionError("layer_norm: empty channel axis")
    if gain.data.shape != (c,) or bias.data.shape != (c,):
        raise DimensionError(
            f"layer_norm: gain/bias shapes {gain.data.shape}/{bias.data.shape} "
            f"do not match channel count {c}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    lead = tuple(range(x.data.ndim - 1))

    def bwd(g):
        dxhat = g * gain.data
        dx = inv / c * (c * dxhat
                        - dxhat.sum(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _emit(xhat * gain.data + bias.data, (x, gain, bias), bwd)


def sum_all(a: Tensor) -> Tensor:
    def bwd(g):
        return (np.full_like(a.data, float(g)),)

    return _emit(np.asarray(a.data.sum()), (a,), bwd)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def bwd(g):
        return (np.full_like(a.data, float(g) / n),)

    return _emit(np.asarray(a.data.mean()), (a,), bwd)


def index_axis(a: Tensor, axis: int, index: int) -> Tensor:
    """Select one position along an axis, dropping that axis."""
    data = np.take(a.data, index, axis=axis)
    where = (slice(None),) * axis + (index,)

    def bwd(g):
        return ((where, g),)

    return _emit(data, (a,), bwd)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = list(tensors)
    data = np.stack([t.data for t in parts], axis=axis)

    def bwd(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(moved[i] for i in range(len(parts)))

    return _emit(data, parts, bwd)
