"""Neural-network primitives on top of the autodiff tensor.

Convolution runs as a patch gather (im2col) followed by one grouped
matrix product, which keeps the CPU path fast enough for desk-scale
training while staying exactly equivalent to the direct nested-loop
definition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import trace
from .tensor import ShapeError, Tensor, _from_op, pad2d

__all__ = [
    "ConvSpec",
    "conv2d",
    "linear",
    "sigmoid",
    "relu",
    "leaky_relu",
    "hardswish",
    "activation",
    "layer_norm",
    "RunningStats",
    "batch_norm",
    "avg_pool2d",
    "max_pool2d",
    "global_avg_pool2d",
    "global_max_pool2d",
    "channel_avg_pool",
    "channel_max_pool",
    "pool",
    "bilinear_upsample_x2",
    "softmax",
    "log_softmax",
]


def _pair(v):
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


@dataclass(frozen=True)
class ConvSpec:
    """Static description of a 2-D convolution."""

    in_channels: int
    out_channels: int
    kernel: tuple = (3, 3)
    stride: tuple = (1, 1)
    padding: tuple = (0, 0)
    dilation: tuple = (1, 1)
    groups: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kernel", _pair(self.kernel))
        object.__setattr__(self, "stride", _pair(self.stride))
        object.__setattr__(self, "padding", _pair(self.padding))
        object.__setattr__(self, "dilation", _pair(self.dilation))
        if self.in_channels <= 0 or self.out_channels <= 0:
            raise ShapeError("channel counts must be positive")
        if self.groups <= 0:
            raise ShapeError("groups must be positive")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ShapeError(
                f"channels ({self.in_channels} in, {self.out_channels} out) "
                f"not divisible by groups={self.groups}"
            )

    @property
    def depthwise(self):
        return self.groups == self.in_channels == self.out_channels

    def weight_shape(self):
        kh, kw = self.kernel
        return (self.out_channels, self.in_channels // self.groups, kh, kw)

    def out_hw(self, h, w):
        kh, kw = self.kernel
        sh, sw = self.stride
        ph, pw = self.padding
        dh, dw = self.dilation
        oh = (h + 2 * ph - (dh * (kh - 1) + 1)) // sh + 1
        ow = (w + 2 * pw - (dw * (kw - 1) + 1)) // sw + 1
        if oh <= 0 or ow <= 0:
            raise ShapeError(
                f"non-positive conv output {oh}x{ow} for input {h}x{w} with {self}"
            )
        return oh, ow


def _gather_indices(h, w, kernel, stride, dilation, oh, ow):
    """Index grids mapping padded input pixels to (window, output) columns."""
    kh, kw = kernel
    sh, sw = stride
    dh, dw = dilation
    i0 = np.repeat(np.arange(kh) * dh, kw)
    j0 = np.tile(np.arange(kw) * dw, kh)
    oi = sh * np.repeat(np.arange(oh), ow)
    oj = sw * np.tile(np.arange(ow), oh)
    return i0[:, None] + oi[None, :], j0[:, None] + oj[None, :]


def conv2d(x, weight, bias, spec):
    """Grouped dilated 2-D convolution over NCHW input.

    ``weight`` must have shape (out, in/groups, kh, kw); ``bias`` is
    optional with shape (out,).  Zero padding.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input, got {x.ndim}-d tensor")
    n, c, h, w = x.shape
    if c != spec.in_channels:
        raise ShapeError(
            f"input has {c} channels, spec expects {spec.in_channels}"
        )
    if tuple(weight.shape) != spec.weight_shape():
        raise ShapeError(
            f"weight shape {tuple(weight.shape)} does not match spec {spec.weight_shape()}"
        )
    if bias is not None and tuple(bias.shape) != (spec.out_channels,):
        raise ShapeError(f"bias shape {tuple(bias.shape)} != ({spec.out_channels},)")

    oh, ow = spec.out_hw(h, w)
    ph, pw = spec.padding
    kh, kw = spec.kernel
    g = spec.groups
    cg = c // g
    og = spec.out_channels // g
    k2 = kh * kw
    ell = oh * ow

    xp = np.pad(x.data, [(0, 0), (0, 0), (ph, ph), (pw, pw)])
    ii, jj = _gather_indices(h, w, spec.kernel, spec.stride, spec.dilation, oh, ow)
    cols = xp[:, :, ii, jj].reshape(n, g, cg * k2, ell)
    wg = weight.data.reshape(g, og, cg * k2)
    out = np.einsum("gok,ngkl->ngol", wg, cols, optimize=True)
    out = np.ascontiguousarray(out.reshape(n, spec.out_channels, oh, ow))
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1)

    trace.emit(
        "conv2d",
        macs=ell * spec.out_channels * cg * k2 * n,
        params=weight.data.size + (bias.data.size if bias is not None else 0),
        out_shape=(n, spec.out_channels, oh, ow),
    )

    parents = (x, weight) if bias is None else (x, weight, bias)

    def make(res):
        def backward():
            grad = res.grad.reshape(n, g, og, ell)
            if weight.requires_grad:
                gw = np.einsum("ngol,ngkl->gok", grad, cols, optimize=True)
                weight._accum(gw.reshape(weight.shape))
            if bias is not None and bias.requires_grad:
                bias._accum(res.grad.sum(axis=(0, 2, 3)))
            if x.requires_grad:
                gcols = np.einsum("gok,ngol->ngkl", wg, grad, optimize=True)
                gcols = gcols.reshape(n, c, k2, ell)
                gxp = np.zeros_like(xp)
                np.add.at(gxp, (slice(None), slice(None), ii, jj), gcols)
                x._accum(gxp[:, :, ph : ph + h, pw : pw + w])

        return backward

    return _from_op(out, parents, "conv2d", make)


def linear(x, weight, bias=None):
    """Affine map over the trailing axis: x @ weight (+ bias)."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(
            f"linear input features {x.shape[-1]} != weight rows {weight.shape[0]}"
        )
    out = x @ weight
    rows = x.size // x.shape[-1]
    trace.emit(
        "linear",
        macs=rows * weight.shape[0] * weight.shape[1],
        params=weight.size + (bias.size if bias is not None else 0),
        out_shape=tuple(out.shape),
    )
    if bias is not None:
        out = out + bias
    return out


# ------------------------------------------------------------- activations


def sigmoid(x):
    d = x.data
    data = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    data = data.astype(np.float32)
    trace.emit("activation", kind="sigmoid", macs=data.size, params=0, out_shape=tuple(x.shape))

    def make(out):
        def backward():
            if x.requires_grad:
                x._accum(out.grad * out.data * (1.0 - out.data))

        return backward

    return _from_op(data, (x,), "sigmoid", make)


def relu(x):
    data = np.maximum(x.data, 0.0)
    trace.emit("activation", kind="relu", macs=0, params=0, out_shape=tuple(x.shape))

    def make(out):
        mask = (x.data > 0).astype(np.float32)

        def backward():
            if x.requires_grad:
                x._accum(out.grad * mask)

        return backward

    return _from_op(data, (x,), "relu", make)


def leaky_relu(x, slope=0.1):
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must be in (0, 1), got {slope}")
    data = np.where(x.data > 0, x.data, np.float32(slope) * x.data)
    trace.emit("activation", kind="leaky_relu", macs=x.size, params=0, out_shape=tuple(x.shape))

    def make(out):
        grad = np.where(x.data > 0, np.float32(1.0), np.float32(slope))

        def backward():
            if x.requires_grad:
                x._accum(out.grad * grad)

        return backward

    return _from_op(data, (x,), "leaky_relu", make)


def hardswish(x):
    """x * clip(x + 3, 0, 6) / 6 with subgradient 0 at the kinks x = +-3."""
    d = x.data
    data = d * np.clip(d + 3.0, 0.0, 6.0) / 6.0
    trace.emit("activation", kind="hardswish", macs=2 * x.size, params=0, out_shape=tuple(x.shape))

    def make(out):
        grad = np.zeros_like(d)
        inner = (d > -3.0) & (d < 3.0)
        grad[inner] = (2.0 * d[inner] + 3.0) / 6.0
        grad[d > 3.0] = 1.0

        def backward():
            if x.requires_grad:
                x._accum(out.grad * grad)

        return backward

    return _from_op(data.astype(np.float32), (x,), "hardswish", make)


_ACTIVATIONS = {"sigmoid": sigmoid, "relu": relu, "leaky_relu": leaky_relu, "hardswish": hardswish}


def activation(x, kind, **kwargs):
    """Dispatch by name; unknown kinds are an error."""
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation kind '{kind}'") from None
    return fn(x, **kwargs)


# ------------------------------------------------------------ normalization


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize the channel vector at each (n, h, w) location."""
    if x.ndim != 4:
        raise ShapeError("layer_norm expects NCHW input")
    c = x.shape[1]
    if tuple(gamma.shape) != (c,) or tuple(beta.shape) != (c,):
        raise ShapeError(f"gamma/beta must have shape ({c},)")
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = (var + eps) ** -0.5
    trace.emit("norm", kind="layer_norm", macs=2 * x.size, params=2 * c, out_shape=tuple(x.shape))
    return xc * inv * gamma.reshape(1, c, 1, 1) + beta.reshape(1, c, 1, 1)


class RunningStats:
    """Exponentially averaged per-channel mean/variance for batch norm."""

    def __init__(self, channels=None):
        if channels is None:
            self.mean = None
            self.var = None
        else:
            self.mean = np.zeros(channels, dtype=np.float32)
            self.var = np.ones(channels, dtype=np.float32)

    @property
    def initialized(self):
        return self.mean is not None

    def update(self, mean, var, momentum):
        m = np.float32(momentum)
        if not self.initialized:
            self.mean = mean.astype(np.float32).copy()
            self.var = var.astype(np.float32).copy()
        else:
            self.mean = (1 - m) * self.mean + m * mean
            self.var = (1 - m) * self.var + m * var


def batch_norm(x, gamma, beta, running, training, momentum=0.1, eps=1e-5):
    """Per-channel normalization over (N, H, W).

    Train mode normalizes with (biased) batch statistics and folds them
    into ``running``; eval mode uses the stored statistics and errors if
    they were never initialized.
    """
    if x.ndim != 4:
        raise ShapeError("batch_norm expects NCHW input")
    c = x.shape[1]
    if tuple(gamma.shape) != (c,) or tuple(beta.shape) != (c,):
        raise ShapeError(f"gamma/beta must have shape ({c},)")
    trace.emit("norm", kind="batch_norm", macs=2 * x.size, params=2 * c, out_shape=tuple(x.shape))
    if training:
        mu = x.mean(axis=(0, 2, 3), keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
        if running is not None:
            running.update(mu.data.reshape(c), var.data.reshape(c), momentum)
        inv = (var + eps) ** -0.5
        xn = xc * inv
    else:
        if running is None or not running.initialized:
            raise RuntimeError("batch_norm eval mode requires initialized running stats")
        inv = (1.0 / np.sqrt(running.var + np.float32(eps))).reshape(1, c, 1, 1)
        xn = (x - Tensor(running.mean.reshape(1, c, 1, 1))) * Tensor(inv)
    return xn * gamma.reshape(1, c, 1, 1) + beta.reshape(1, c, 1, 1)


# ------------------------------------------------------------------ pooling


def _pool_prepare(x, window, stride):
    if x.ndim != 4:
        raise ShapeError("pooling expects NCHW input")
    kh, kw = _pair(window)
    if kh <= 0 or kw <= 0:
        raise ShapeError("empty pooling window")
    sh, sw = _pair(stride if stride is not None else window)
    n, c, h, w = x.shape
    if kh > h or kw > w:
        raise ShapeError(f"pool window {kh}x{kw} exceeds spatial extent {h}x{w}")
    oh = (h - kh) // sh + 1
    ow = (w - kw) // sw + 1
    ii, jj = _gather_indices(h, w, (kh, kw), (sh, sw), (1, 1), oh, ow)
    cols = x.data[:, :, ii, jj]  # (n, c, kh*kw, oh*ow)
    return cols, (n, c, h, w, kh, kw, oh, ow, ii, jj)


def avg_pool2d(x, window, stride=None):
    cols, (n, c, h, w, kh, kw, oh, ow, ii, jj) = _pool_prepare(x, window, stride)
    data = cols.mean(axis=2).reshape(n, c, oh, ow)
    trace.emit("pool", kind="avg", macs=data.size, params=0, out_shape=(n, c, oh, ow))

    def make(out):
        def backward():
            if x.requires_grad:
                g = out.grad.reshape(n, c, 1, oh * ow) / np.float32(kh * kw)
                gx = np.zeros_like(x.data)
                np.add.at(gx, (slice(None), slice(None), ii, jj), np.broadcast_to(g, (n, c, kh * kw, oh * ow)))
                x._accum(gx)

        return backward

    return _from_op(data, (x,), "avg_pool2d", make)


def max_pool2d(x, window, stride=None):
    cols, (n, c, h, w, kh, kw, oh, ow, ii, jj) = _pool_prepare(x, window, stride)
    idx = np.argmax(cols, axis=2)
    data = np.take_along_axis(cols, idx[:, :, None, :], axis=2)[:, :, 0, :].reshape(n, c, oh, ow)
    trace.emit("pool", kind="max", macs=0, params=0, out_shape=(n, c, oh, ow))

    def make(out):
        def backward():
            if x.requires_grad:
                g = out.grad.reshape(n, c, oh * ow)
                gcols = np.zeros((n, c, kh * kw, oh * ow), dtype=np.float32)
                np.put_along_axis(gcols, idx[:, :, None, :], g[:, :, None, :], axis=2)
                gx = np.zeros_like(x.data)
                np.add.at(gx, (slice(None), slice(None), ii, jj), gcols)
                x._accum(gx)

        return backward

    return _from_op(data, (x,), "max_pool2d", make)


def global_avg_pool2d(x):
    """Mean over (H, W); output keeps 1x1 spatial extent."""
    trace.emit("pool", kind="global_avg", macs=x.shape[0] * x.shape[1], params=0,
               out_shape=(x.shape[0], x.shape[1], 1, 1))
    return x.mean(axis=(2, 3), keepdims=True)


def global_max_pool2d(x):
    trace.emit("pool", kind="global_max", macs=0, params=0,
               out_shape=(x.shape[0], x.shape[1], 1, 1))
    return x.amax(axis=3, keepdims=True).amax(axis=2, keepdims=True)


def channel_avg_pool(x):
    """Mean across the channel axis; yields a 1-channel map."""
    trace.emit("pool", kind="channel_avg", macs=x.shape[0] * x.shape[2] * x.shape[3],
               params=0, out_shape=(x.shape[0], 1, x.shape[2], x.shape[3]))
    return x.mean(axis=1, keepdims=True)


def channel_max_pool(x):
    trace.emit("pool", kind="channel_max", macs=0, params=0,
               out_shape=(x.shape[0], 1, x.shape[2], x.shape[3]))
    return x.amax(axis=1, keepdims=True)


def pool(x, kind, window=None, stride=None):
    """Dispatch helper covering windowed, global and channel-axis pooling."""
    table = {
        ("avg", False): lambda: avg_pool2d(x, window, stride),
        ("max", False): lambda: max_pool2d(x, window, stride),
        ("avg", True): lambda: global_avg_pool2d(x),
        ("max", True): lambda: global_max_pool2d(x),
    }
    key = (kind, window is None)
    if key not in table:
        raise ValueError(f"unknown pool kind '{kind}'")
    return table[key]()


# ----------------------------------------------------------------- resample


def bilinear_upsample_x2(x):
    """Double both spatial extents with half-pixel-centre bilinear weights."""
    if x.ndim != 4:
        raise ShapeError("bilinear_upsample_x2 expects NCHW input")
    n, c, h, w = x.shape
    if h < 1 or w < 1:
        raise ShapeError("empty spatial extent")

    def axis_map(size):
        s = (np.arange(2 * size) + 0.5) / 2.0 - 0.5
        lo = np.floor(s)
        frac = (s - lo).astype(np.float32)
        i0 = np.clip(lo, 0, size - 1).astype(np.int64)
        i1 = np.clip(lo + 1, 0, size - 1).astype(np.int64)
        return i0, i1, frac

    r0, r1, fr = axis_map(h)
    c0, c1, fc = axis_map(w)
    wr0, wr1 = (1 - fr)[:, None], fr[:, None]
    wc0, wc1 = (1 - fc)[None, :], fc[None, :]

    d = x.data
    data = (
        d[:, :, r0][:, :, :, c0] * (wr0 * wc0)
        + d[:, :, r0][:, :, :, c1] * (wr0 * wc1)
        + d[:, :, r1][:, :, :, c0] * (wr1 * wc0)
        + d[:, :, r1][:, :, :, c1] * (wr1 * wc1)
    ).astype(np.float32)
    trace.emit("upsample", kind="bilinear_x2", macs=4 * data.size, params=0,
               out_shape=(n, c, 2 * h, 2 * w))

    def make(out):
        def backward():
            if not x.requires_grad:
                return
            g = out.grad
            gx = np.zeros_like(x.data)
            for ri, wrow in ((r0, wr0), (r1, wr1)):
                for ci, wcol in ((c0, wc0), (c1, wc1)):
                    np.add.at(gx, (slice(None), slice(None), ri[:, None], ci[None, :]), g * (wrow * wcol))
            x._accum(gx)

        return backward

    return _from_op(data, (x,), "bilinear_upsample_x2", make)


# ------------------------------------------------------------------ softmax


def softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = (e / e.sum(axis=axis, keepdims=True)).astype(np.float32)

    def make(out):
        def backward():
            if x.requires_grad:
                s = out.data
                g = out.grad
                x._accum(s * (g - (g * s).sum(axis=axis, keepdims=True)))

        return backward

    return _from_op(data, (x,), "softmax", make)


def log_softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = (shifted - lse).astype(np.float32)

    def make(out):
        sm = np.exp(data)

        def backward():
            if x.requires_grad:
                g = out.grad
                x._accum(g - sm * g.sum(axis=axis, keepdims=True))

        return backward

    return _from_op(data, (x,), "log_softmax", make)
