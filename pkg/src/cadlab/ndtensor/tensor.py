"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation on a tensor that requires grad records its parents and a
backward closure. ``grad`` walks that graph once in reverse topological
order and then consumes it, so each forward build supports exactly one
backward pass.
"""

from __future__ import annotations

import warnings
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "UntrackedParameterWarning",
    "as_tensor",
    "concat",
    "cos",
    "exp",
    "gather_rows",
    "grad",
    "sigmoid",
    "silu",
    "sin",
    "sqrt",
    "tanh",
]


class UntrackedParameterWarning(UserWarning):
    """A parameter passed to ``grad`` never took part in the forward build."""


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # sum out axes that numpy broadcasting added or stretched
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) else data
        if arr.dtype != np.float64:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple[np.ndarray | None, ...]] | None = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # graph construction -------------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, parents: Sequence["Tensor"], backward) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # arithmetic ----------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor._make(
            self.data + other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)),
        )

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor._make(
            self.data - other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a), _unbroadcast(-g, b)),
        )

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other) - self

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other)
        x, y = self.data, other.data
        return Tensor._make(
            x * y,
            (self, other),
            lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = as_tensor(other)
        x, y = self.data, other.data
        return Tensor._make(
            x / y,
            (self, other),
            lambda g: (_unbroadcast(g / y, x.shape), _unbroadcast(-g * x / (y * y), y.shape)),
        )

    def __rtruediv__(self, other) -> "Tensor":
        return as_tensor(other) / self

    def __pow__(self, p: float) -> "Tensor":
        if isinstance(p, Tensor):
            raise TypeError("only constant exponents are supported")
        x = self.data
        return Tensor._make(x**p, (self,), lambda g: (g * p * x ** (p - 1),))

    def __matmul__(self, other) -> "Tensor":
        other = as_tensor(other)
        if self.ndim != 2 or other.ndim != 2:
            raise ValueError(f"matmul needs rank-2 operands, got {self.shape} @ {other.shape}")
        x, w = self.data, other.data
        return Tensor._make(x @ w, (self, other), lambda g: (g @ w.T, x.T @ g))

    # reductions and reshapes ---------------------------------------------

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape) -> "Tensor":
        old = self.shape
        return Tensor._make(self.data.reshape(*shape), (self,), lambda g: (g.reshape(old),))

    @property
    def T(self) -> "Tensor":
        if self.ndim != 2:
            raise ValueError("transpose is defined for rank-2 tensors only")
        return Tensor._make(self.data.T, (self,), lambda g: (g.T,))

    def __getitem__(self, idx) -> "Tensor":
        shape = self.shape

        def backward(g):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return (out,)

        return Tensor._make(self.data[idx], (self,), backward)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# elementwise nonlinearities ----------------------------------------------


def sin(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return Tensor._make(np.sin(x.data), (x,), lambda g: (g * np.cos(x.data),))


def cos(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return Tensor._make(np.cos(x.data), (x,), lambda g: (-g * np.sin(x.data),))


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return Tensor._make(out, (x,), lambda g: (g * out,))


def sqrt(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return Tensor._make(out, (x,), lambda g: (g * 0.5 / out,))


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return Tensor._make(out, (x,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # tanh form: overflow-free and much cheaper than a sign-split exp
    out = np.tanh(0.5 * v)
    out *= 0.5
    out += 0.5
    return out


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = _sigmoid(x.data)
    return Tensor._make(out, (x,), lambda g: (g * out * (1.0 - out),))


def silu(x: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    x = as_tensor(x)
    s = _sigmoid(x.data)
    out = x.data * s
    return Tensor._make(out, (x,), lambda g: (g * (s + out * (1.0 - s)),))


# structural ops --------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def gather_rows(table: Tensor, index) -> Tensor:
    """Row lookup ``table[index]`` for an integer index array (embedding tables)."""
    index = np.asarray(index, dtype=np.intp)
    n_rows = table.shape[0]
    if index.size and (index.min() < 0 or index.max() >= n_rows):
        raise IndexError(f"row index out of range for table with {n_rows} rows")

    def backward(g):
        out = np.zeros(table.shape)
        np.add.at(out, index, g)
        return (out,)

    return Tensor._make(table.data[index], (table,), backward)


# reverse pass ----------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def grad(
    loss: Tensor, params: Mapping[str, Tensor] | Iterable[Tensor]
) -> dict[str, np.ndarray] | list[np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to ``params``.

    ``params`` may be a name -> tensor mapping (returns a dict with the same
    keys) or a plain sequence (returns a list in the same order). Parameters
    that never entered the graph get a zero gradient and an
    ``UntrackedParameterWarning``. The graph is consumed afterwards.
    """
    if loss.data.size != 1:
        raise ValueError(f"grad needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise RuntimeError("this graph was already consumed by a previous backward pass")

    named = isinstance(params, Mapping)
    items = list(params.items()) if named else list(enumerate(params))

    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg

    for node in order:
        if node._backward is not None:
            node._parents = ()
            node._backward = None
            node._consumed = True
    loss._consumed = True

    missing = [k for k, p in items if id(p) not in grads]
    if missing:
        warnings.warn(
            f"parameters not on the tape, returning zero gradient: {missing}",
            UntrackedParameterWarning,
            stacklevel=2,
        )
    out = [np.asarray(grads.get(id(p), np.zeros_like(p.data)), dtype=np.float64) for _, p in items]
    if named:
        return {k: g for (k, _), g in zip(items, out)}
    return out
