"""Minimal reverse-mode autodiff over dense float64 matrices.

Every tensor is 2-D. The graph is built on the fly by the forward ops below
and differentiated by :meth:`Tensor.backward`. Broadcasting is limited to a
row vector ``(1, c)`` or column vector ``(r, 1)`` against an ``(r, c)`` matrix.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

LOG_FLOOR = 1e-12


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), op: str = ""):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = tuple(_parents)
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = op

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    # -- backward ---------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf with requires_grad.

        Gradients of all reachable tensors are reset first, so calling this
        twice on the same graph gives the same result instead of doubling.
        """
        if self.shape != (1, 1):
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topological(self)
        for node in order:
            node.grad = None
        self.grad = np.ones((1, 1))
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            node._backward(node.grad)

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _topological(root: Tensor) -> list[Tensor]:
    # iterative DFS; SoftRR graphs get deep enough to hit the recursion limit
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
        for p in reversed(node._parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad = t.grad + g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str, backward) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, _parents=parents if needs else (), op=op)
    if needs:
        out._backward = backward
    return out


def _broadcast_shape(a: tuple[int, int], b: tuple[int, int], op: str) -> tuple[int, int]:
    out = []
    for x, y in zip(a, b):
        if x != y and 1 not in (x, y):
            raise ShapeError(f"{op}: incompatible shapes {a} and {b}")
        out.append(max(x, y))
    return out[0], out[1]


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


# -- elementwise binary ------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "add")

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), "add", backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "sub")

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), "sub", backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "mul")

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), "mul", backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "div")
    out = a.data / b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g / b.data, a.shape))
        _accumulate(b, _unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), "div", backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        _accumulate(a, g * c)

    return _make(a.data * c, (a,), "scale", backward)


def add_const(a: Tensor, c) -> Tensor:
    """``a + c`` where ``c`` is treated as a constant (never differentiated)."""
    cdata = c.data if isinstance(c, Tensor) else np.asarray(c, dtype=np.float64)
    if cdata.ndim < 2:
        cdata = cdata.reshape(1, -1) if cdata.ndim == 1 else cdata.reshape(1, 1)
    if _broadcast_shape(a.shape, cdata.shape, "add_const") != a.shape:
        raise ShapeError(f"add_const: constant {cdata.shape} would enlarge {a.shape}")

    def backward(g):
        _accumulate(a, g)

    return _make(a.data + cdata, (a,), "add_const", backward)


# -- matrix ops ----------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), "matmul", backward)


def transpose(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, g.T)

    return _make(a.data.T.copy(), (a,), "transpose", backward)


# -- elementwise unary ---------------------------------------------------------


def square(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, 2.0 * a.data * g)

    return _make(a.data * a.data, (a,), "square", backward)


def relu(a: Tensor) -> Tensor:
    """Elementwise ``max(a, 0)``; the subgradient at 0 is 0."""
    mask = a.data > 0

    def backward(g):
        _accumulate(a, g * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), "relu", backward)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - out * out))

    return _make(out, (a,), "tanh", backward)


def log(a: Tensor, floor: float = LOG_FLOOR) -> Tensor:
    """Natural log of ``max(a, floor)``; no gradient flows below the floor."""
    clamped = np.maximum(a.data, floor)
    live = a.data >= floor

    def backward(g):
        _accumulate(a, g * live / clamped)

    return _make(np.log(clamped), (a,), "log", backward)


# -- row-wise ops --------------------------------------------------------------


def row_softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        _accumulate(a, out * (g - dot))

    return _make(out, (a,), "row_softmax", backward)


def _row_extreme(a: Tensor, pick) -> Tensor:
    # np.argmin/argmax return the first attaining index, which is the tie rule
    idx = pick(a.data, axis=1)
    rows = np.arange(a.shape[0])
    out = a.data[rows, idx].reshape(-1, 1)

    def backward(g):
        full = np.zeros_like(a.data)
        full[rows, idx] = g[:, 0]
        _accumulate(a, full)

    return _make(out, (a,), pick.__name__.replace("arg", "row_"), backward)


def row_min(a: Tensor) -> Tensor:
    return _row_extreme(a, np.argmin)


def row_max(a: Tensor) -> Tensor:
    return _row_extreme(a, np.argmax)


def row_sum(a: Tensor) -> Tensor:
    """Sum across each row, giving an ``(r, 1)`` column."""

    def backward(g):
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _make(a.data.sum(axis=1, keepdims=True), (a,), "row_sum", backward)


def col_sum(a: Tensor) -> Tensor:
    """Sum down each column, giving a ``(1, c)`` row."""

    def backward(g):
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _make(a.data.sum(axis=0, keepdims=True), (a,), "col_sum", backward)


def total(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, np.full(a.shape, g[0, 0]))

    return _make(np.array([[a.data.sum()]]), (a,), "sum", backward)


def mean(a: Tensor) -> Tensor:
    return scale(total(a), 1.0 / a.data.size)


# -- structural ------------------------------------------------------------------


def repeat_rows(a: Tensor, k: int) -> Tensor:
    """Stack ``k`` copies of ``a`` vertically."""
    if k < 1:
        raise ValueError(f"repeat count must be >= 1, got {k}")
    n = a.shape[0]

    def backward(g):
        _accumulate(a, g.reshape(k, n, -1).sum(axis=0))

    return _make(np.tile(a.data, (k, 1)), (a,), "repeat_rows", backward)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= a.shape[0]:
        raise ShapeError(f"slice_rows: range [{start}, {stop}) invalid for shape {a.shape}")

    def backward(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        _accumulate(a, full)

    return _make(a.data[start:stop].copy(), (a,), "slice_rows", backward)


def _concat(parts: Sequence[Tensor], axis: int, name: str) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    other = 1 - axis
    ref = parts[0].shape[other]
    for p in parts[1:]:
        if p.shape[other] != ref:
            raise ShapeError(f"{name}: incompatible shapes {parts[0].shape} and {p.shape}")
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def backward(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            _accumulate(p, g[lo:hi] if axis == 0 else g[:, lo:hi])

    return _make(np.concatenate([p.data for p in parts], axis=axis), parts, name, backward)


def hstack(parts: Iterable[Tensor]) -> Tensor:
    return _concat(list(parts), 1, "hstack")


def vstack(parts: Iterable[Tensor]) -> Tensor:
    return _concat(list(parts), 0, "vstack")


# -- validation ---------------------------------------------------------------------


class FiniteDifferenceError(RuntimeError):
    pass


def finite_difference_check(f: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5) -> float:
    """Compare backprop gradients of ``f`` with central differences.

    ``f`` takes no arguments and rebuilds its graph from the current values of
    ``params`` on every call. Returns the largest
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)`` over all entries.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    loss = f()
    if not np.isfinite(loss.item()):
        raise FiniteDifferenceError("non-finite loss at the unperturbed parameters")
    loss.backward()
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for k, (p, ga) in enumerate(zip(params, analytic)):
        for idx in np.ndindex(*p.shape):
            orig = p.data[idx]
            p.data[idx] = orig + step
            hi = f().item()
            p.data[idx] = orig - step
            lo = f().item()
            p.data[idx] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise FiniteDifferenceError(f"non-finite loss probing param {k} at index {idx}")
            num = (hi - lo) / (2 * step)
            a = ga[idx]
            worst = max(worst, abs(a - num) / max(1.0, abs(a), abs(num)))
    return worst
