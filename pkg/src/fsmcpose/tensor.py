"""Dense float32 tensor with reverse-mode automatic differentiation.

Every operation records a closure that knows how to push its output
gradient back to its parents.  Graphs are built eagerly and torn down
after ``backward``; values produced by an operation are treated as
immutable.  All forward math runs in 32-bit floats.
"""

from __future__ import annotations

import contextlib

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "NumericError",
    "ShapeError",
    "no_grad",
    "concat",
    "pad2d",
]


class NumericError(RuntimeError):
    """A library operation produced NaN or Inf."""


class ShapeError(ValueError):
    """Operand shapes are inconsistent for the requested operation."""


# Finite-value validation after every op.  Costs one pass over the output;
# acceptable at the scales this library targets.
FINITE_CHECKS = True

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _check_finite(data, op):
    if FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by '{op}'")


class Tensor:
    """N-dimensional float32 array, optionally tracked by the gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev", "_op")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._prev = ()
        self._op = "leaf"

    # ------------------------------------------------------------------ info
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def numpy(self):
        """Read-only view of the underlying array."""
        return self.data

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        grad = ", grad" if self.grad is not None else ""
        return f"Tensor(shape={tuple(self.shape)}, op={self._op}{grad})"

    # ------------------------------------------------------------ grad utils
    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float32, copy=True)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Reverse-mode sweep from this tensor.

        ``grad`` seeds the output gradient; defaults to ones (so a scalar
        loss needs no argument).
        """
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor outside the tape")
        if grad is None:
            grad = np.ones_like(self.data)
        self._accum(np.asarray(grad, dtype=np.float32))

        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in visited:
                    stack.append((p, False))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # ------------------------------------------------------------- operators
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
        return mul(self, _wrap(-1.0))

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def amax(self, axis, keepdims=False):
        return tamax(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def exp(self):
        return texp(self)

    def log(self):
        return tlog(self)

    def sqrt(self):
        return power(self, 0.5)

    def clip(self, lo, hi):
        return tclip(self, lo, hi)


class Parameter(Tensor):
    """A tensor registered as learnable model state."""

    __slots__ = ()

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))


def _from_op(data, parents, op, backward_builder):
    """Create the op output; attach the tape node when gradients are live."""
    _check_finite(data, op)
    out = Tensor(data)
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = parents
        out._op = op
        out._backward = backward_builder(out)
    return out


def _unbroadcast(g, shape):
    """Reduce gradient ``g`` back to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -------------------------------------------------------------- elementwise


def add(a, b):
    data = a.data + b.data

    def make(out):
        def backward():
            if a.requires_grad:
                a._accum(_unbroadcast(out.grad, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(out.grad, b.shape))

        return backward

    return _from_op(data, (a, b), "add", make)


def sub(a, b):
    data = a.data - b.data

    def make(out):
        def backward():
            if a.requires_grad:
                a._accum(_unbroadcast(out.grad, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(-out.grad, b.shape))

        return backward

    return _from_op(data, (a, b), "sub", make)


def mul(a, b):
    data = a.data * b.data

    def make(out):
        def backward():
            if a.requires_grad:
                a._accum(_unbroadcast(out.grad * b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(out.grad * a.data, b.shape))

        return backward

    return _from_op(data, (a, b), "mul", make)


def div(a, b):
    data = a.data / b.data

    def make(out):
        def backward():
            if a.requires_grad:
                a._accum(_unbroadcast(out.grad / b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(-out.grad * a.data / (b.data * b.data), b.shape))

        return backward

    return _from_op(data, (a, b), "div", make)


def power(a, p):
    p = float(p)
    data = a.data**p

    def make(out):
        def backward():
            if a.requires_grad:
                a._accum((out.grad * p * a.data ** (p - 1.0)).astype(np.float32))

        return backward

    return _from_op(data, (a,), "pow", make)


def texp(a):
    data = np.exp(a.data)

    def make(out):
        def backward():
            if a.requires_grad:
                a._accum(out.grad * out.data)

        return backward

    return _from_op(data, (a,), "exp", make)


def tlog(a):
    data = np.log(a.data)

    def make(out):
        def backward():
            if a.requires_grad:
                a._accum(out.grad / a.data)

        return backward

    return _from_op(data, (a,), "log", make)


def tclip(a, lo, hi):
    """Clamp to [lo, hi]; gradient is zero outside and at the boundaries."""
    lo = float(lo)
    hi = float(hi)
    data = np.clip(a.data, lo, hi)

    def make(out):
        inside = ((a.data > lo) & (a.data < hi)).astype(np.float32)

        def backward():
            if a.requires_grad:
                a._accum(out.grad * inside)

        return backward

    return _from_op(data, (a,), "clip", make)


# --------------------------------------------------------------- reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a, axis=None, keepdims=False):
    axes = _norm_axis(axis, a.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)

    def make(out):
        def backward():
            if a.requires_grad:
                g = out.grad
                if not keepdims:
                    g = np.expand_dims(g, axes)
                a._accum(np.broadcast_to(g, a.shape))

        return backward

    return _from_op(data, (a,), "sum", make)


def tmean(a, axis=None, keepdims=False):
    axes = _norm_axis(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    data = a.data.mean(axis=axes, keepdims=keepdims)

    def make(out):
        def backward():
            if a.requires_grad:
                g = out.grad
                if not keepdims:
                    g = np.expand_dims(g, axes)
                a._accum(np.broadcast_to(g, a.shape) / np.float32(count))

        return backward

    return _from_op(data, (a,), "mean", make)


def tamax(a, axis, keepdims=False):
    """Max over one axis; gradient routes to the first maximum (ties)."""
    axis = axis % a.ndim
    data = a.data.max(axis=axis, keepdims=keepdims)

    def make(out):
        idx = np.argmax(a.data, axis=axis)

        def backward():
            if not a.requires_grad:
                return
            g = out.grad
            if not keepdims:
                g = np.expand_dims(g, axis)
            mask = np.zeros_like(a.data)
            np.put_along_axis(mask, np.expand_dims(idx, axis), 1.0, axis=axis)
            a._accum(mask * g)

        return backward

    return _from_op(data, (a,), "amax", make)


# --------------------------------------------------------------- structural


def reshape(a, shape):
    data = a.data.reshape(shape)

    def make(out):
        def backward():
            if a.requires_grad:
                a._accum(out.grad.reshape(a.shape))

        return backward

    return _from_op(data, (a,), "reshape", make)


def transpose(a, axes):
    axes = tuple(axes)
    data = a.data.transpose(axes)

    def make(out):
        inv = np.argsort(axes)

        def backward():
            if a.requires_grad:
                a._accum(out.grad.transpose(inv))

        return backward

    return _from_op(data, (a,), "transpose", make)


def getitem(a, idx):
    """Basic (slice/int) indexing with scatter-back gradient."""
    data = a.data[idx]

    def make(out):
        def backward():
            if a.requires_grad:
                g = np.zeros_like(a.data)
                g[idx] = out.grad
                a._accum(g)

        return backward

    return _from_op(data, (a,), "getitem", make)


def concat(tensors, axis):
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)

    def make(out):
        sizes = [t.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)

        def backward():
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    sl = [slice(None)] * out.grad.ndim
                    sl[axis] = slice(lo, hi)
                    t._accum(out.grad[tuple(sl)])

        return backward

    return _from_op(data, tuple(tensors), "concat", make)


def matmul(a, b):
    """Matrix product with numpy batch semantics (2-D weights typical)."""
    data = np.matmul(a.data, b.data)

    def make(out):
        def backward():
            g = out.grad
            if a.requires_grad:
                ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
                a._accum(_unbroadcast(ga, a.shape))
            if b.requires_grad:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
                b._accum(_unbroadcast(gb, b.shape))

        return backward

    return _from_op(data, (a, b), "matmul", make)


def pad2d(a, pads, mode="zero"):
    """Pad the two trailing (spatial) axes of an NCHW tensor.

    ``pads`` is (top, bottom, left, right).  Modes: ``zero``, ``reflect``
    (edge not repeated), ``symmetric`` (edge repeated).  The non-zero modes
    scatter gradients back through an index map built with the same numpy
    padding rule, so the backward pass is exact for any size.
    """
    pt, pb, pl, pr = pads
    if min(pads) < 0:
        raise ShapeError("negative padding")
    spec = [(0, 0)] * (a.ndim - 2) + [(pt, pb), (pl, pr)]
    if mode == "zero":
        data = np.pad(a.data, spec)

        def make(out):
            def backward():
                if a.requires_grad:
                    sl = (Ellipsis, slice(pt, pt + a.shape[-2]), slice(pl, pl + a.shape[-1]))
                    a._accum(out.grad[sl])

            return backward

        return _from_op(data, (a,), "pad2d", make)

    if mode not in ("reflect", "symmetric"):
        raise ValueError(f"unknown padding mode '{mode}'")
    h, w = a.shape[-2], a.shape[-1]
    src = np.pad(np.arange(h * w).reshape(h, w), [(pt, pb), (pl, pr)], mode=mode)
    data = a.data.reshape(a.shape[:-2] + (h * w,))[..., src]

    def make(out):
        flat_src = src.ravel()

        def backward():
            if a.requires_grad:
                g = out.grad.reshape(out.grad.shape[:-2] + (-1,))
                acc = np.zeros(a.shape[:-2] + (h * w,), dtype=np.float32)
                np.add.at(acc, (Ellipsis, flat_src), g)
                a._accum(acc.reshape(a.shape))

        return backward

    return _from_op(data, (a,), f"pad2d_{mode}", make)
