"""Define-by-run reverse-mode autodiff over numpy arrays.

Every operation on a :class:`Tensor` that has a grad-requiring ancestor records
its parents and a closure that pushes the output gradient back to them. The
tape is rebuilt on each forward pass and released by :meth:`Tensor.backward`.
"""
from __future__ import annotations

import contextlib
import threading

import numpy as np

_state = threading.local()


def _get(attr, default):
    return getattr(_state, attr, default)


def default_dtype():
    return _get("dtype", np.float32)


def grad_enabled() -> bool:
    return _get("grad", True)


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for new tensors (``float32``/``float64``)."""
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported precision {dtype!r}")
    prev = _get("dtype", np.float32)
    _state.dtype = dtype
    try:
        yield
    finally:
        _state.dtype = prev


def float64_mode():
    return precision(np.float64)


@contextlib.contextmanager
def no_grad():
    prev = _get("grad", True)
    _state.grad = False
    try:
        yield
    finally:
        _state.grad = prev


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


class ShapeError(ValueError):
    pass


def _check_finite(arr, op):
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op}: produced non-finite values")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad=False, dtype=None):
        dtype = dtype or default_dtype()
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = None
        self._consumed = False

    # ------------------------------------------------------------------ basics
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        tag = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{tag})"

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    # ------------------------------------------------------------ graph plumbing
    @classmethod
    def _make(cls, data, parents, backward, op):
        """Wrap an op result, recording the tape entry when gradients are wanted."""
        _check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._consumed = False
        out._op = op
        if grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if g.shape != self.data.shape:
            g = _unbroadcast(g, self.data.shape)
        if g.dtype != self.data.dtype:
            g = g.astype(self.data.dtype)
        self.grad = g if self.grad is None else self.grad + g

    def backward(self):
        """Backpropagate from this scalar, accumulating into leaf ``grad`` fields."""
        if self.data.size != 1:
            raise ValueError(f"backward: loss must be a scalar, got shape {self.shape}")
        if self._consumed:
            raise RuntimeError("backward: graph already consumed; re-run the forward pass")
        if not self.requires_grad:
            raise RuntimeError("backward: loss does not depend on any tensor requiring grad")

        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        for node in topo:
            if node._backward is not None:
                node._backward = None
                node._parents = ()
                node.grad = None if node is not self else node.grad
        self._consumed = True

    # --------------------------------------------------------------- operators
    def __add__(self, other):
        other = as_tensor(other, self.dtype)
        a, b = self, other

        def bw(g):
            a._accumulate(g)
            b._accumulate(g)

        return Tensor._make(_binary(np.add, a, b, "add"), (a, b), bw, "add")

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other, self.dtype)
        a, b = self, other

        def bw(g):
            a._accumulate(g)
            b._accumulate(-g)

        return Tensor._make(_binary(np.subtract, a, b, "sub"), (a, b), bw, "sub")

    def __rsub__(self, other):
        return as_tensor(other, self.dtype) - self

    def __mul__(self, other):
        other = as_tensor(other, self.dtype)
        a, b = self, other

        def bw(g):
            if a.requires_grad:
                a._accumulate(g * b.data)
            if b.requires_grad:
                b._accumulate(g * a.data)

        return Tensor._make(_binary(np.multiply, a, b, "mul"), (a, b), bw, "mul")

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by scalars")
        return self * (1.0 / other)

    def __matmul__(self, other):
        from dyndiff.numerics.functional import matmul

        return matmul(self, other)

    def __getitem__(self, idx):
        a = self

        def bw(g):
            full = np.zeros_like(a.data)
            full[idx] = g
            a._accumulate(full)

        return Tensor._make(a.data[idx], (a,), bw, "getitem")

    # -------------------------------------------------------------- reductions
    def sum(self, axis=None, keepdims=False):
        a = self

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.shape))

        return Tensor._make(
            np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw, "sum"
        )

    def mean(self, axis=None, keepdims=False):
        count = self.size if axis is None else np.prod([self.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self

        def bw(g):
            a._accumulate(g.reshape(a.shape))

        return Tensor._make(a.data.reshape(shape), (a,), bw, "reshape")

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))
        a = self

        def bw(g):
            a._accumulate(g.transpose(inverse))

        return Tensor._make(a.data.transpose(axes), (a,), bw, "transpose")


class Parameter(Tensor):
    """A named trainable tensor; ``grad`` starts at zero."""

    __slots__ = ("name",)

    def __init__(self, name, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _binary(fn, a, b, op):
    try:
        return fn(a.data, b.data)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def _unbroadcast(g, shape):
    """Sum ``g`` over the axes that broadcasting expanded to reach ``g.shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g
