"""Reverse-mode automatic differentiation on numpy arrays.

A Tensor wraps an ndarray and records the operation graph as it is built
(define-by-run).  ``backward()`` walks the tape once in reverse topological
order, accumulates gradients into every reachable leaf, then frees the tape;
a second backward through the same graph raises.

float64 is the default dtype.  float32 can be selected process-wide with
``set_default_dtype`` (the training entry point does this when configured)
— gradients always match the data dtype.
"""

from __future__ import annotations

import contextlib

import numpy as np

SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805

_GRAD_ENABLED = True
_DEFAULT_DTYPE = np.dtype(np.float64)


def set_default_dtype(dtype) -> None:
    """Set the dtype used for newly created tensors and parameters."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported default dtype: {dt}")
    _DEFAULT_DTYPE = dt


def default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def default_dtype_scope(dtype):
    """Temporarily switch the default dtype (used by tests and the CLI)."""
    prev = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class no_grad(contextlib.ContextDecorator):
    """Context in which no graph is recorded (evaluation, attack arithmetic)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_freed")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            raise TypeError("wrapping a Tensor in a Tensor — use .detach() or .copy()")
        arr = np.asarray(data)
        if arr.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._freed = False

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _node(data, parents, backward):
        """Internal: result tensor of an op, with tape entry if grads flow."""
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._freed = False
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    def _accumulate(self, g):
        if self.requires_grad:
            if self.grad is None:
                self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
            else:
                self.grad += g

    # -- basic protocol ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        """The underlying array (no copy — do not mutate while a graph is live)."""
        return self.data

    def detach(self) -> "Tensor":
        t = Tensor.__new__(Tensor)
        t.data = self.data
        t.grad = None
        t.requires_grad = False
        t._parents = ()
        t._backward = None
        t._freed = False
        return t

    def zero_grad(self) -> None:
        self.grad = None

    # -- backward ------------------------------------------------------------

    def backward(self, grad=None, leaves=None) -> None:
        """Backpropagate from this tensor.

        ``grad`` defaults to ones (the tensor must then be a scalar).  After
        the walk the tape is freed; backpropagating through it again raises.
        Leaves passed in ``leaves`` that the graph does not reach get explicit
        zero gradients, so optimizers see every parameter.
        """
        if self._freed:
            raise RuntimeError("backward: graph already freed by a previous backward")
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward without explicit grad requires a scalar")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise ValueError("backward: grad shape mismatch")
        if not self.requires_grad:
            raise RuntimeError("backward on a tensor that does not require grad")

        order = self._toposort()
        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(order):
            fn = node._backward
            if fn is not None:
                fn(node.grad)
            node._freed = True
            node._backward = None
            node._parents = ()
            if fn is not None:  # intermediate value: release its grad buffer
                node.grad = None
        if leaves is not None:
            for leaf in leaves:
                if leaf.requires_grad and leaf.grad is None:
                    leaf.grad = np.zeros_like(leaf.data)

    def _toposort(self):
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            nid = id(node)
            if nid in seen:
                continue
            seen.add(nid)
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return order

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            a, b = self, other
            data = a.data + b.data

            def backward(g):
                a._accumulate(_unbroadcast(g, a.data.shape))
                b._accumulate(_unbroadcast(g, b.data.shape))

            return Tensor._node(data, (a, b), backward)
        other = self._const(other)
        data = self.data + other
        a = self

        def backward(g):
            a._accumulate(_unbroadcast(g, a.data.shape))

        return Tensor._node(data, (a,), backward)

    __radd__ = __add__

    def __neg__(self):
        a = self
        return Tensor._node(-a.data, (a,), lambda g: a._accumulate(-g))

    def __sub__(self, other):
        if isinstance(other, Tensor):
            a, b = self, other
            data = a.data - b.data

            def backward(g):
                a._accumulate(_unbroadcast(g, a.data.shape))
                b._accumulate(_unbroadcast(-g, b.data.shape))

            return Tensor._node(data, (a, b), backward)
        return self + (-self._const(other))

    def __rsub__(self, other):
        return (-self) + self._const(other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            a, b = self, other
            data = a.data * b.data

            def backward(g):
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))

            return Tensor._node(data, (a, b), backward)
        other = self._const(other)
        a = self
        data = a.data * other
        return Tensor._node(data, (a,), lambda g: a._accumulate(_unbroadcast(g * other, a.data.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            a, b = self, other
            data = a.data / b.data

            def backward(g):
                a._accumulate(_unbroadcast(g / b.data, a.data.shape))
                b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

            return Tensor._node(data, (a, b), backward)
        return self * (1.0 / self._const(other))

    def __rtruediv__(self, other):
        other = self._const(other)
        a = self
        data = other / a.data

        def backward(g):
            a._accumulate(_unbroadcast(-g * other / (a.data * a.data), a.data.shape))

        return Tensor._node(data, (a,), backward)

    def __pow__(self, n):
        if isinstance(n, Tensor):
            raise TypeError("tensor exponents are not supported")
        n = float(n)
        a = self
        data = a.data ** n

        def backward(g):
            a._accumulate(g * n * a.data ** (n - 1.0))

        return Tensor._node(data, (a,), backward)

    def __matmul__(self, other):
        if not isinstance(other, Tensor):
            other = Tensor(self._const(other))
        a, b = self, other
        if a.data.ndim < 2 or b.data.ndim != 2:
            raise ValueError("matmul supports (..., n) @ (n, m)")
        data = a.data @ b.data

        def backward(g):
            a._accumulate(g @ b.data.T)
            lhs = a.data.reshape(-1, a.data.shape[-1])
            b._accumulate(lhs.T @ g.reshape(-1, g.shape[-1]))

        return Tensor._node(data, (a, b), backward)

    def _const(self, other):
        """Coerce a python/numpy constant operand to an ndarray of our dtype."""
        arr = np.asarray(other, dtype=self.data.dtype)
        return arr

    # -- elementwise functions -------------------------------------------------

    def exp(self):
        a = self
        data = np.exp(a.data)
        return Tensor._node(data, (a,), lambda g: a._accumulate(g * data))

    def log(self):
        a = self
        data = np.log(a.data)
        return Tensor._node(data, (a,), lambda g: a._accumulate(g / a.data))

    def sqrt(self):
        a = self
        data = np.sqrt(a.data)
        return Tensor._node(data, (a,), lambda g: a._accumulate(g * (0.5 / data)))

    def tanh(self):
        a = self
        data = np.tanh(a.data)
        return Tensor._node(data, (a,), lambda g: a._accumulate(g * (1.0 - data * data)))

    def sigmoid(self):
        a = self
        # 0.5*(1+tanh(x/2)) is stable in both tails
        data = 0.5 * (1.0 + np.tanh(0.5 * a.data))
        return Tensor._node(data, (a,), lambda g: a._accumulate(g * data * (1.0 - data)))

    def relu(self):
        a = self
        mask = a.data > 0
        data = np.where(mask, a.data, 0.0)
        return Tensor._node(data, (a,), lambda g: a._accumulate(g * mask))

    def selu(self):
        a = self
        pos = a.data > 0
        data = SELU_SCALE * np.where(pos, a.data, SELU_ALPHA * np.expm1(a.data))

        def backward(g):
            slope = SELU_SCALE * np.where(pos, 1.0, SELU_ALPHA * np.exp(a.data))
            a._accumulate(g * slope)

        return Tensor._node(data, (a,), backward)

    def abs(self):
        a = self
        data = np.abs(a.data)
        return Tensor._node(data, (a,), lambda g: a._accumulate(g * np.sign(a.data)))

    def clamp(self, lo=None, hi=None):
        a = self
        data = np.clip(a.data, lo, hi)
        inside = np.ones(a.data.shape, dtype=bool)
        if lo is not None:
            inside &= a.data > lo
        if hi is not None:
            inside &= a.data < hi

        def backward(g):
            a._accumulate(g * inside)

        return Tensor._node(data, (a,), backward)

    # -- reductions -------------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self
        data = a.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            a._accumulate(_spread(g, a.data.shape, axis, keepdims))

        return Tensor._node(data, (a,), backward)

    def mean(self, axis=None, keepdims=False):
        a = self
        data = a.data.mean(axis=axis, keepdims=keepdims)
        count = a.data.size if axis is None else _axis_count(a.data.shape, axis)

        def backward(g):
            a._accumulate(_spread(g, a.data.shape, axis, keepdims) / count)

        return Tensor._node(data, (a,), backward)

    def max(self, axis=None, keepdims=False):
        """Max reduction; ties route the gradient to the first maximum."""
        a = self
        if axis is None:
            data = a.data.max(keepdims=keepdims)
            flat_idx = int(a.data.argmax())

            def backward(g):
                buf = np.zeros_like(a.data)
                buf.flat[flat_idx] = np.asarray(g).reshape(-1)[0]
                a._accumulate(buf)

            return Tensor._node(data, (a,), backward)
        if isinstance(axis, tuple):
            raise ValueError("max over multiple axes: reshape first")
        data = a.data.max(axis=axis, keepdims=keepdims)
        idx = a.data.argmax(axis=axis)

        def backward(g):
            gg = g if keepdims else np.expand_dims(g, axis)
            buf = np.zeros_like(a.data)
            np.put_along_axis(buf, np.expand_dims(idx, axis), gg, axis=axis)
            a._accumulate(buf)

        return Tensor._node(data, (a,), backward)

    # -- shape ops ---------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        data = a.data.reshape(shape)
        return Tensor._node(data, (a,), lambda g: a._accumulate(g.reshape(a.data.shape)))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        a = self
        inv = np.argsort(axes)
        data = a.data.transpose(axes)
        return Tensor._node(data, (a,), lambda g: a._accumulate(g.transpose(inv)))

    def __getitem__(self, key):
        a = self
        data = a.data[key]
        if not isinstance(data, np.ndarray):
            data = np.asarray(data)

        def backward(g):
            buf = np.zeros_like(a.data)
            buf[key] = g  # basic indexing only: destination elements are unique
            a._accumulate(buf)

        return Tensor._node(data, (a,), backward)


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _axis_count(shape, axis):
    if isinstance(axis, int):
        axis = (axis,)
    n = 1
    for ax in axis:
        n *= shape[ax]
    return n


def _spread(g, shape, axis, keepdims):
    """Broadcast a reduced gradient back over the reduced axes."""
    g = np.asarray(g)
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


# -- free functions ------------------------------------------------------------


def tensor(data, requires_grad=False, dtype=None) -> Tensor:
    arr = np.asarray(data, dtype=dtype if dtype is not None else None)
    if arr.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        arr = arr.astype(_DEFAULT_DTYPE)
    return Tensor(arr, requires_grad=requires_grad)


def zeros(*shape, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_DEFAULT_DTYPE), requires_grad=requires_grad)


def ones(*shape, requires_grad=False) -> Tensor:
    return Tensor(np.ones(shape, dtype=_DEFAULT_DTYPE), requires_grad=requires_grad)


def randn(rng: np.random.Generator, *shape, std=1.0, requires_grad=False) -> Tensor:
    data = rng.normal(0.0, std, size=shape).astype(_DEFAULT_DTYPE)
    return Tensor(data, requires_grad=requires_grad)


def concat(tensors, axis=0) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            t._accumulate(g[tuple(sl)])

    return Tensor._node(data, tuple(tensors), backward)


def stack(tensors, axis=0) -> Tensor:
    return concat([t.reshape(t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors], axis=axis)


def index_select(t: Tensor, idx) -> Tensor:
    """Gather rows t[idx]; duplicate indices accumulate gradient correctly."""
    idx = np.asarray(idx)
    if idx.ndim != 1:
        raise ValueError("index_select expects a 1-d index array")
    data = t.data[idx]
    a = t

    def backward(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, idx, g)
        a._accumulate(buf)

    return Tensor._node(data, (a,), backward)


def take_rows(t: Tensor, idx) -> Tensor:
    """Select one column per row: out[i] = t[i, idx[i]] (labels into logits)."""
    idx = np.asarray(idx)
    if t.ndim != 2 or idx.ndim != 1 or idx.shape[0] != t.shape[0]:
        raise ValueError("take_rows expects t (n, m) and idx (n,)")
    rows = np.arange(t.shape[0])
    data = t.data[rows, idx]
    a = t

    def backward(g):
        buf = np.zeros_like(a.data)
        buf[rows, idx] = g
        a._accumulate(buf)

    return Tensor._node(data, (a,), backward)


# -- composite functions ---------------------------------------------------------


def log_softmax(t: Tensor, axis=-1) -> Tensor:
    shift = t - Tensor(t.data.max(axis=axis, keepdims=True))
    return shift - shift.exp().sum(axis=axis, keepdims=True).log()


def softmax(t: Tensor, axis=-1) -> Tensor:
    return log_softmax(t, axis=axis).exp()


def softplus(t: Tensor) -> Tensor:
    """log(1 + exp(t)), stable for large |t|."""
    return t.relu() + (1.0 + (-t.abs()).exp()).log()


class ZeroNormError(ValueError):
    """Raised when a vector with (near-)zero norm is asked to be normalized."""


def normalize(t: Tensor, axis=-1, min_norm=1e-12) -> Tensor:
    """L2-normalize along `axis`; rejects zero-norm slices instead of fudging."""
    sq = (t * t).sum(axis=axis, keepdims=True)
    norms = np.sqrt(sq.data)
    if np.any(norms < min_norm):
        raise ZeroNormError(f"cannot L2-normalize: slice norm below {min_norm}")
    return t / sq.sqrt()
