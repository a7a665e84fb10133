"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Tensor` holds an ``ndarray`` plus an optional graph node recording the
operation that produced it. Calling :meth:`Tensor.backward` on a scalar walks the
graph in reverse topological order and accumulates gradients additively into
every reachable tensor that requires them. Callers zero gradients between steps.

Supported operations are registered in ``_OPS`` and reachable through
:func:`apply_op` or the operator overloads on :class:`Tensor`.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "tensor",
    "apply_op",
    "grad_check",
    "OP_KINDS",
    "no_grad",
]

_GRAD_ENABLED = True


@contextmanager
def no_grad() -> Iterator[None]:
    """Skip graph recording inside the block."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


class NonFiniteError(FloatingPointError):
    """Raised when a forward value, function value or gradient is not finite."""


class _Node:
    __slots__ = ("op", "parents", "backward")

    def __init__(self, op: str, parents: tuple, backward: Callable):
        self.op = op
        self.parents = parents
        self.backward = backward


class Tensor:
    """Dense float64 array with an optional computation-graph node."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "name")
    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: _Node | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr) -> "Tensor":
        t = cls.__new__(cls)
        t.data = np.asarray(arr, dtype=np.float64)
        t.requires_grad = False
        t.grad = None
        t._node = None
        t.name = None
        return t

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def op(self) -> str | None:
        return None if self._node is None else self._node.op

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", op={self.op}" if self._node else ""
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{rg}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return apply_op("add", [self, other])

    def __radd__(self, other):
        return apply_op("add", [other, self])

    def __sub__(self, other):
        return apply_op("sub", [self, other])

    def __rsub__(self, other):
        return apply_op("sub", [other, self])

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return apply_op("scalar_mul", [self], scalar=float(other))
        return apply_op("mul", [self, other])

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return apply_op("scalar_mul", [self], scalar=float(other))
        return apply_op("mul", [other, self])

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return apply_op("scalar_mul", [self], scalar=1.0 / float(other))
        return apply_op("div", [self, other])

    def __rtruediv__(self, other):
        return apply_op("div", [other, self])

    def __neg__(self):
        return apply_op("neg", [self])

    def __matmul__(self, other):
        return apply_op("matmul", [self, other])

    def __rmatmul__(self, other):
        return apply_op("matmul", [other, self])

    @property
    def T(self) -> "Tensor":
        return apply_op("transpose", [self])

    def relu(self):
        return apply_op("relu", [self])

    def exp(self):
        return apply_op("exp", [self])

    def log(self):
        return apply_op("log", [self])

    def sqrt(self):
        return apply_op("sqrt", [self])

    def sigmoid(self):
        return apply_op("sigmoid", [self])

    def sum(self, axis=None, keepdims=False):
        return apply_op("sum", [self], axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return apply_op("mean", [self], axis=axis, keepdims=keepdims)

    def l2_norm_rows(self):
        return apply_op("l2_norm_rows", [self])

    def softmax_rows(self):
        return apply_op("softmax_rows", [self])

    def log_softmax_rows(self):
        return apply_op("log_softmax_rows", [self])

    def clamp_min(self, lo: float):
        return apply_op("clamp_min", [self], lo=float(lo))

    def clip(self, lo: float, hi: float):
        return apply_op("clip", [self], lo=float(lo), hi=float(hi))

    def reshape(self, shape):
        return apply_op("reshape", [self], shape=tuple(shape))

    def take_rows(self, index):
        return apply_op("take_rows", [self], index=np.asarray(index, dtype=np.intp))

    def pick(self, index):
        """Select one column per row: ``out[j] = self[j, index[j]]``."""
        return apply_op("pick", [self], index=np.asarray(index, dtype=np.intp))

    # -- reverse mode -----------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(t) into ``t.grad`` for every reachable ``t``.

        ``self`` must hold exactly one element. Gradients add to whatever is
        already stored, so optimizers zero them between steps.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for t in reversed(order):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t.requires_grad:
                t.grad = g.copy() if t.grad is None else t.grad + g
            node = t._node
            if node is None:
                continue
            # overflow is reported below as NonFiniteError, not as a numpy warning
            with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                parent_grads = node.backward(g)
            for i, (p, pg) in enumerate(zip(node.parents, parent_grads)):
                if pg is None or not p.requires_grad:
                    continue
                if not np.all(np.isfinite(pg)):
                    raise NonFiniteError(
                        f"non-finite gradient produced by '{node.op}' node for input {i} "
                        f"(shape {p.shape})"
                    )
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            for p in t._node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
    return order


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    if isinstance(data, Tensor):
        return data
    return Tensor(data, requires_grad=requires_grad, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def _require_rank2(op: str, a: Tensor) -> None:
    if a.ndim != 2:
        raise ShapeError(f"{op}: expected a rank-2 tensor, got shape {a.shape}")


def _check_finite(op: str, out: np.ndarray) -> None:
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{op}: non-finite value in result")


# Each rule maps (inputs, **attrs) -> (output array, backward(g) -> tuple of grads).

def _op_matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
    A, B = a.data, b.data
    return A @ B, lambda g: (g @ B.T, A.T @ g)


def _op_add(a, b):
    _broadcast("add", a, b)
    return a.data + b.data, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))


def _op_sub(a, b):
    _broadcast("sub", a, b)
    return a.data - b.data, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))


def _op_mul(a, b):
    _broadcast("mul", a, b)
    A, B = a.data, b.data
    return A * B, lambda g: (_unbroadcast(g * B, a.shape), _unbroadcast(g * A, b.shape))


def _op_div(a, b):
    _broadcast("div", a, b)
    A, B = a.data, b.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = A / B
    _check_finite("div", out)
    return out, lambda g: (_unbroadcast(g / B, a.shape), _unbroadcast(-g * A / (B * B), b.shape))


def _op_scalar_mul(a, scalar):
    return a.data * scalar, lambda g: (g * scalar,)


def _op_neg(a):
    return -a.data, lambda g: (-g,)


def _op_relu(a):
    mask = a.data > 0
    return np.where(mask, a.data, 0.0), lambda g: (g * mask,)


def _op_exp(a):
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    _check_finite("exp", out)
    return out, lambda g: (g * out,)


def _op_log(a):
    if np.any(a.data <= 0):
        raise NonFiniteError("log: non-positive input gives a non-finite value")
    A = a.data
    return np.log(A), lambda g: (g / A,)


def _op_sqrt(a):
    if np.any(a.data < 0):
        raise NonFiniteError("sqrt: negative input")
    out = np.sqrt(a.data)
    with np.errstate(divide="ignore"):
        d = np.where(out > 0, 0.5 / np.where(out > 0, out, 1.0), 0.0)
    return out, lambda g: (g * d,)


def _op_sigmoid(a):
    A = a.data
    out = np.empty_like(A)
    pos = A >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-A[pos]))
    e = np.exp(A[~pos])
    out[~pos] = e / (1.0 + e)
    return out, lambda g: (g * out * (1.0 - out),)


def _op_sum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return out, back


def _op_mean(a, axis=None, keepdims=False):
    out = a.data.mean(axis=axis, keepdims=keepdims)
    shape = a.shape
    count = a.data.size if axis is None else np.prod([shape[ax] for ax in np.atleast_1d(axis)])

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape) / count,)

    return out, back


def _op_l2_norm_rows(a):
    _require_rank2("l2_norm_rows", a)
    A = a.data
    norms = np.sqrt((A * A).sum(axis=1, keepdims=True))
    safe = np.where(norms > 0, norms, 1.0)
    # subgradient 0 at the zero row
    unit = np.where(norms > 0, A / safe, 0.0)
    return norms, lambda g: (g * unit,)


def _op_softmax_rows(a):
    _require_rank2("softmax_rows", a)
    A = a.data
    e = np.exp(A - A.max(axis=1, keepdims=True))
    s = e / e.sum(axis=1, keepdims=True)
    return s, lambda g: (s * (g - (g * s).sum(axis=1, keepdims=True)),)


def _op_log_softmax_rows(a):
    _require_rank2("log_softmax_rows", a)
    A = a.data
    shifted = A - A.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    s = np.exp(out)
    return out, lambda g: (g - s * g.sum(axis=1, keepdims=True),)


def _op_clamp_min(a, lo):
    mask = a.data > lo
    return np.where(mask, a.data, lo), lambda g: (g * mask,)


def _op_clip(a, lo, hi):
    mask = (a.data >= lo) & (a.data <= hi)
    return np.clip(a.data, lo, hi), lambda g: (g * mask,)


def _op_transpose(a):
    _require_rank2("transpose", a)
    return a.data.T.copy(), lambda g: (g.T,)


def _op_reshape(a, shape):
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    old = a.shape
    return out, lambda g: (g.reshape(old),)


def _op_take_rows(a, index):
    if index.size and (index.min() < -a.shape[0] or index.max() >= a.shape[0]):
        raise ShapeError(f"take_rows: index out of range for {a.shape[0]} rows")
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return a.data[index], back


def _op_pick(a, index):
    _require_rank2("pick", a)
    if index.shape != (a.shape[0],):
        raise ShapeError(f"pick: need one index per row, got {index.shape} for {a.shape}")
    rows = np.arange(a.shape[0])
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        out[rows, index] = g
        return (out,)

    return a.data[rows, index], back


_OPS: dict[str, Callable] = {
    "matmul": _op_matmul,
    "add": _op_add,
    "sub": _op_sub,
    "mul": _op_mul,
    "div": _op_div,
    "scalar_mul": _op_scalar_mul,
    "neg": _op_neg,
    "relu": _op_relu,
    "exp": _op_exp,
    "log": _op_log,
    "sqrt": _op_sqrt,
    "sigmoid": _op_sigmoid,
    "sum": _op_sum,
    "mean": _op_mean,
    "l2_norm_rows": _op_l2_norm_rows,
    "softmax_rows": _op_softmax_rows,
    "log_softmax_rows": _op_log_softmax_rows,
    "clamp_min": _op_clamp_min,
    "clip": _op_clip,
    "transpose": _op_transpose,
    "reshape": _op_reshape,
    "take_rows": _op_take_rows,
    "pick": _op_pick,
}

OP_KINDS = frozenset(_OPS)


def apply_op(op_kind: str, inputs: Sequence, **attrs) -> Tensor:
    """Run ``op_kind`` on ``inputs`` and record a graph node when needed.

    Non-tensor inputs are wrapped as constants. Row-wise ops require rank-2
    inputs; elementwise binary ops follow numpy broadcasting.
    """
    try:
        rule = _OPS[op_kind]
    except KeyError:
        raise ValueError(f"unknown op kind {op_kind!r}") from None
    args = [_as_tensor(x) for x in inputs]
    with np.errstate(over="ignore", invalid="ignore"):
        data, back = rule(*args, **attrs)
    if not np.all(np.isfinite(data)) and all(np.all(np.isfinite(t.data)) for t in args):
        raise NonFiniteError(f"{op_kind}: finite inputs gave a non-finite result")
    out = Tensor._wrap(data)
    if _GRAD_ENABLED and any(t.requires_grad for t in args):
        out.requires_grad = True
        out._node = _Node(op_kind, tuple(args), back)
    return out


def grad_check(
    scalar_fn: Callable[[list[Tensor]], Tensor | float],
    params: Iterable[Tensor],
    step: float = 1e-5,
) -> float:
    """Largest ``|autodiff - central difference| / max(1, |central difference|)``.

    ``scalar_fn`` is called with ``params`` and must be deterministic. Parameter
    data is perturbed in place and restored afterwards; existing grads are
    cleared.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    params = list(params)

    def value() -> float:
        out = scalar_fn(params)
        v = out.item() if isinstance(out, Tensor) else float(out)
        if not np.isfinite(v):
            raise NonFiniteError("grad_check: function value is not finite")
        return v

    for p in params:
        p.grad = None
    out = scalar_fn(params)
    if isinstance(out, Tensor) and out.requires_grad:
        out.backward()

    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        a_flat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = value()
            flat[i] = orig - step
            f_minus = value()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * step)
            err = abs(a_flat[i] - fd) / max(1.0, abs(fd))
            worst = max(worst, err)
    return worst
