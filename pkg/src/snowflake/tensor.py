"""Dense float64 tensors with reverse-mode differentiation.

Every op builds a node that remembers its parents and a closure mapping the
output gradient to parent gradients. ``backward`` orders the recorded graph
topologically (the tape) and sweeps it in reverse.
"""
from __future__ import annotations

import contextvars
from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Incompatible tensor shapes."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _backward=None, op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: Callable | None = _backward
        self.op = op
        self.name = ""

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self.op or 'leaf'})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self.shape)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # operator sugar
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

    def __getitem__(self, index):
        return index_select(self, index)

    def sum(self, axis=None, keepdims=False):
        return reduce(self, axis, "sum", keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce(self, axis, "mean", keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce(self, axis, "max", keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def tanh(self):
        return tanh(self)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)


class Parameter(Tensor):
    """A trainable leaf tensor; ``name`` is filled in by the owning module."""

    __slots__ = ()

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _not_scalar(shape):
    raise DimensionError(f"expected a single-element tensor, got shape {shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, _parents=tuple(parents), _backward=backward, op=op)
    return Tensor(data, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


# elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), backward, "mul")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis``."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (a,), backward, "softmax")


def norm(a, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; the subgradient at zero is taken as zero."""
    a = as_tensor(a)
    out = np.sqrt((a.data * a.data).sum(axis=axis))

    def backward(g):
        d = np.expand_dims(out, axis)
        safe = np.where(d > 0, d, 1.0)
        return (np.where(d > 0, a.data / safe, 0.0) * np.expand_dims(g, axis),)

    return _node(out, (a,), backward, "norm")


# linear algebra and shape

def matmul(a, b) -> Tensor:
    """``a[..., k] @ b[k, n]``; leading axes of ``a`` act as a batch of rows."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return _node(a.data @ b.data, (a, b), backward, "matmul")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {a.shape} to {tuple(shape)}") from None
    return _node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def _check_axis(a: Tensor, axis):
    if axis is None:
        return None
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {a.shape}")
    return axis % a.ndim


def reduce(a, axis=None, mode: str = "sum", keepdims: bool = False) -> Tensor:
    """Sum, mean or max along ``axis`` (all axes when None).

    Max routes the gradient to one element per slice, the first maximal one.
    """
    a = as_tensor(a)
    axis = _check_axis(a, axis)
    if mode == "sum":
        out = a.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)

    elif mode == "mean":
        n = a.data.size if axis is None else a.shape[axis]
        out = a.data.mean(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g / n, a.shape).copy(),)

    elif mode == "max":
        if axis is None:
            flat = int(np.argmax(a.data))
            out = a.data.reshape(-1)[flat]
            if keepdims:
                out = out.reshape((1,) * a.ndim)

            def backward(g):
                grad = np.zeros(a.data.size)
                grad[flat] = np.asarray(g).reshape(-1)[0]
                return (grad.reshape(a.shape),)

        else:
            arg = np.expand_dims(np.argmax(a.data, axis=axis), axis)
            out = np.take_along_axis(a.data, arg, axis=axis)
            if not keepdims:
                out = np.squeeze(out, axis=axis)

            def backward(g):
                if not keepdims:
                    g = np.expand_dims(g, axis)
                grad = np.zeros(a.shape)
                np.put_along_axis(grad, arg, g, axis=axis)
                return (grad,)

    else:
        raise ValueError(f"unknown reduction {mode!r}")
    node = _node(np.asarray(out, dtype=np.float64), (a,), backward, f"reduce_{mode}")
    return node


def argmax(a, axis: int) -> np.ndarray:
    """Indices recorded by a max reduction (lowest index on ties)."""
    a = as_tensor(a)
    return np.argmax(a.data, axis=_check_axis(a, axis))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat of an empty list")
    ax = _check_axis(ts[0], axis)
    ref = ts[0].shape
    for t in ts[1:]:
        if t.ndim != len(ref) or any(s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax):
            raise DimensionError(f"concat shapes differ off axis {axis}: {ref} vs {t.shape}")
    bounds = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _node(np.concatenate([t.data for t in ts], axis=ax), ts, backward, "concat")


def gather(a, indices, axis: int = 0) -> Tensor:
    """Select slices of ``a`` along ``axis``; the result has ``indices.shape`` in place of that axis.

    Backward scatters additively, so repeated indices accumulate.
    """
    a = as_tensor(a)
    ax = _check_axis(a, axis)
    idx = np.asarray(indices, dtype=np.intp)
    n = a.shape[ax]
    if idx.size and (idx.min() < -n or idx.max() >= n):
        raise IndexError(f"gather index out of range for axis of size {n}")
    idx = idx % n if idx.size else idx
    out = np.take(a.data, idx, axis=ax)

    def backward(g):
        grad = np.zeros(a.shape)
        if ax == 0:
            np.add.at(grad, idx.reshape(-1), g.reshape((-1,) + a.shape[1:]))
        else:
            moved_g = np.moveaxis(g.reshape(a.shape[:ax] + (-1,) + a.shape[ax + 1:]), ax, 0)
            np.add.at(np.moveaxis(grad, ax, 0), idx.reshape(-1), moved_g)
        return (grad,)

    return _node(out, (a,), backward, "gather")


def index_select(a, index) -> Tensor:
    """Basic numpy slicing (no fancy indexing)."""
    a = as_tensor(a)
    out = a.data[index]

    def backward(g):
        grad = np.zeros(a.shape)
        grad[index] = g
        return (grad,)

    return _node(np.array(out, dtype=np.float64), (a,), backward, "slice")


def repeat_rows(a, r: int) -> Tensor:
    """Duplicate every row ``r`` times, keeping each row's copies adjacent."""
    a = as_tensor(a)
    return gather(a, np.repeat(np.arange(a.shape[0]), r), axis=0)


# differentiation

def _topological(root: Tensor) -> list[Tensor]:
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
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into ``.grad`` of every tracked ancestor."""
    if loss.data.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad or pg is None:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# discrete choices held fixed across finite-difference probes

class _ChoiceLog:
    def __init__(self):
        self.entries: list = []
        self.replaying = False
        self.position = 0

    def next(self, compute: Callable):
        if not self.replaying:
            value = compute()
            self.entries.append(value)
            return value
        if self.position >= len(self.entries):
            raise RuntimeError("computation made more discrete choices than when recorded")
        value = self.entries[self.position]
        self.position += 1
        return value


_choices: contextvars.ContextVar[_ChoiceLog | None] = contextvars.ContextVar("snowflake_choices", default=None)


def discrete_choice(compute: Callable):
    """Evaluate an index-valued decision (nearest neighbours, matchings, FPS).

    Inside :func:`grad_check` the first evaluation is recorded and later
    probes replay it, so the function being differentiated stays smooth.
    """
    log = _choices.get()
    return compute() if log is None else log.next(compute)


def _scalar(value) -> float:
    v = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
    if v.size != 1:
        raise DimensionError(f"grad_check function must return a scalar, got shape {v.shape}")
    v = float(v.reshape(-1)[0])
    if not np.isfinite(v):
        raise NumericError(f"non-finite function value {v}")
    return v


def grad_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    eps: float = 1e-5,
    *,
    floor: float = 1e-6,
    max_per_param: int | None = None,
    seed: int = 0,
) -> float:
    """Worst element-wise relative error between backward and central differences.

    Relative error is ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
    ``max_per_param`` samples that many entries per tensor (seeded) instead
    of probing all of them.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = list(params)
    log = _ChoiceLog()
    token = _choices.set(log)
    try:
        for p in params:
            p.grad = None
        out = f()
        _scalar(out)
        backward(out)
        analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]
        log.replaying = True
        rng = np.random.default_rng(seed)
        worst = 0.0
        for p, grad in zip(params, analytic):
            if not np.all(np.isfinite(grad)):
                raise NumericError(f"non-finite gradient for {p.name or p!r}")
            flat = p.data.reshape(-1)
            picks = np.arange(flat.size)
            if max_per_param is not None and flat.size > max_per_param:
                picks = np.sort(rng.choice(flat.size, max_per_param, replace=False))
            for i in picks:
                orig = flat[i]
                flat[i] = orig + eps
                log.position = 0
                up = _scalar(f())
                flat[i] = orig - eps
                log.position = 0
                down = _scalar(f())
                flat[i] = orig
                numeric = (up - down) / (2 * eps)
                a = grad.reshape(-1)[i]
                err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
                worst = max(worst, err)
        return worst
    finally:
        _choices.reset(token)
        for p in params:
            p.grad = None
