"""Small reverse-mode differentiation engine over float64 numpy arrays.

Each :class:`Tensor` records the tensors it was computed from and a closure
that maps the output gradient to input gradients. :func:`backward` walks the
graph in reverse topological order, which is fixed by construction order, so
repeated calls are bit-identical.

Only the operations needed by the CTR predictors, the importance regularizer
and the analytic demo maps are provided. Binary ops accept numpy-style
broadcasting of their operands; the gradient is summed back to each operand's
shape.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import NumericError

_scope: list[str] = []


@contextlib.contextmanager
def scope(name: str) -> Iterator[None]:
    """Label ops created inside the block; used in non-finite error reports."""
    _scope.append(name)
    try:
        yield
    finally:
        _scope.pop()


def _where(op: str) -> str:
    return "/".join(_scope + [op])


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "parents", "backward_fn", "op")

    def __init__(
        self,
        value,
        requires_grad: bool = False,
        parents: Sequence["Tensor"] = (),
        backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None,
        op: str = "leaf",
    ):
        value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise NumericError(f"non-finite value produced at {_where(op)}")
        self.value = value
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.shape})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def variable(value) -> Tensor:
    return Tensor(value, requires_grad=True)


def constant(value) -> Tensor:
    return value if isinstance(value, Tensor) and not value.requires_grad else Tensor(value)


def detach(t: Tensor) -> Tensor:
    return Tensor(t.value.copy())


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value, parents, backward_fn, op) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(value, requires_grad=needs, parents=parents if needs else (),
                  backward_fn=backward_fn if needs else None, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(a.value * b.value, (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.shape),
                            _unbroadcast(g * a.value, b.shape)), "mul")


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return _make(a.value @ b.value, (a, b),
                 lambda g: (g @ b.value.T, a.value.T @ g), "matmul")


def relu(a: Tensor) -> Tensor:
    # derivative at exactly 0 is 0
    mask = a.value > 0
    return _make(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,), "relu")


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.value)
    return _make(np.abs(a.value), (a,), lambda g: (g * sign,), "abs")


def square(a: Tensor) -> Tensor:
    return _make(a.value * a.value, (a,), lambda g: (2.0 * g * a.value,), "square")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(a.value.sum(axis=axis, keepdims=keepdims), (a,), back, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.value.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def l2norm(a: Tensor, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; the subgradient at a zero vector is 0."""
    norm = np.sqrt(np.sum(a.value * a.value, axis=axis))

    def back(g):
        n = np.expand_dims(norm, axis)
        safe = np.where(n > 0, n, 1.0)
        unit = np.where(n > 0, a.value / safe, 0.0)
        return (np.expand_dims(g, axis) * unit,)

    return _make(norm, (a,), back, "l2norm")


def sigmoid_values(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Per-sample binary cross-entropy in the log-sum-exp form."""
    z = logits.value
    y = np.asarray(labels, dtype=np.float64)
    if z.shape != y.shape:
        raise ValueError(f"logits {z.shape} and labels {y.shape} differ in shape")
    loss = np.maximum(z, 0.0) - y * z + np.log1p(np.exp(-np.abs(z)))
    return _make(loss, (logits,), lambda g: (g * (sigmoid_values(z) - y),), "bce")


def backward(root: Tensor, seed: np.ndarray | float | None = None) -> None:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every leaf requiring grad."""
    if seed is None:
        if root.value.size != 1:
            raise ValueError("backward on a non-scalar needs an explicit seed")
        seed = np.ones_like(root.value)
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node.parents):
            if id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(root): np.broadcast_to(seed, root.shape).astype(np.float64)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
