"""Haar wavelet analysis/synthesis, per-subband convolution and the fixed
Gaussian smoother used by the frequency-enhancement block.

The transform is orthonormal: every subband coefficient is a +-1/2
weighted sum of one 2x2 input block, so energy is preserved and the
synthesis step is the exact inverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .functional import ConvSpec, conv2d
from .tensor import ShapeError, Tensor, _from_op, pad2d

__all__ = [
    "WaveletBands",
    "dwt2_haar",
    "idwt2_haar",
    "wtconv",
    "GaussianKernel",
    "gaussian_kernel",
    "gaussian_smooth",
]


@dataclass
class WaveletBands:
    """The four half-resolution subbands of one decomposition level.

    ``ll`` carries the local averages; ``lh``/``hl``/``hh`` carry
    horizontal, vertical and diagonal detail and vanish exactly on
    spatially constant input.
    """

    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor

    def __post_init__(self):
        shapes = {tuple(b.shape) for b in (self.ll, self.lh, self.hl, self.hh)}
        if len(shapes) != 1:
            raise ShapeError(f"subband shapes differ: {sorted(shapes)}")

    def as_tuple(self):
        return (self.ll, self.lh, self.hl, self.hh)


def dwt2_haar(x):
    """One level of the orthonormal 2-D Haar analysis transform.

    Spatial dims must be even; callers that may see odd sizes pad first
    (the block wrapper does symmetric padding and crops after synthesis).
    """
    if x.ndim != 4:
        raise ShapeError("dwt2_haar expects NCHW input")
    h, w = x.shape[2], x.shape[3]
    if h % 2 or w % 2:
        raise ShapeError(
            f"dwt2_haar needs even spatial dims, got {h}x{w}; pad the input first"
        )
    a = x[:, :, 0::2, 0::2]
    b = x[:, :, 0::2, 1::2]
    c = x[:, :, 1::2, 0::2]
    d = x[:, :, 1::2, 1::2]
    half = 0.5
    ll = (a + b + c + d) * half
    lh = (b - a + d - c) * half
    hl = (c - a + d - b) * half
    hh = (a - b - c + d) * half
    return WaveletBands(ll=ll, lh=lh, hl=hl, hh=hh)


def _interleave2x2(a, b, c, d):
    """Place four HxW maps on the even/odd grid of a 2Hx2W output."""
    n, ch, h, w = a.shape
    data = np.empty((n, ch, 2 * h, 2 * w), dtype=np.float32)
    data[:, :, 0::2, 0::2] = a.data
    data[:, :, 0::2, 1::2] = b.data
    data[:, :, 1::2, 0::2] = c.data
    data[:, :, 1::2, 1::2] = d.data

    def make(out):
        def backward():
            g = out.grad
            for t, (ri, ci) in zip((a, b, c, d), ((0, 0), (0, 1), (1, 0), (1, 1))):
                if t.requires_grad:
                    t._accum(g[:, :, ri::2, ci::2])

        return backward

    return _from_op(data, (a, b, c, d), "interleave2x2", make)


def idwt2_haar(bands):
    """Exact synthesis inverse of :func:`dwt2_haar`."""
    ll, lh, hl, hh = bands.as_tuple()
    half = 0.5
    a = (ll - lh - hl + hh) * half
    b = (ll + lh - hl - hh) * half
    c = (ll - lh + hl - hh) * half
    d = (ll + lh + hl + hh) * half
    return _interleave2x2(a, b, c, d)


def wtconv(x, subband_weights):
    """Convolve each Haar subband with its own depthwise 3x3 kernel set,
    then synthesize back to the input resolution.

    ``subband_weights`` holds four (C, 1, 3, 3) tensors ordered
    (ll, lh, hl, hh).  Zero padding 1 keeps subband shapes, so the output
    shape equals the input shape.
    """
    if len(subband_weights) != 4:
        raise ShapeError("wtconv needs exactly four subband kernel sets")
    c = x.shape[1]
    spec = ConvSpec(c, c, kernel=(3, 3), padding=(1, 1), groups=c)
    bands = dwt2_haar(x)
    filtered = [
        conv2d(band, w, None, spec)
        for band, w in zip(bands.as_tuple(), subband_weights)
    ]
    return idwt2_haar(WaveletBands(*filtered))


@dataclass(frozen=True, eq=False)
class GaussianKernel:
    """Fixed, normalized isotropic Gaussian taps."""

    size: int
    sigma: float
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = self.weights
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise ValueError("kernel weights must sum to 1")
        if not (w > 0).all():
            raise ValueError("kernel weights must be strictly positive")


def gaussian_kernel(size=5, sigma=1.0):
    """Build the normalized ``size`` x ``size`` Gaussian with centre peak."""
    if size % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {size}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    r = size // 2
    g = np.arange(size, dtype=np.float64) - r
    w = np.exp(-(g[:, None] ** 2 + g[None, :] ** 2) / (2.0 * sigma * sigma))
    w /= w.sum()
    return GaussianKernel(size=size, sigma=float(sigma), weights=w)


def gaussian_smooth(x, kernel=None):
    """Depthwise smoothing with the fixed Gaussian, reflect padding.

    The kernel is constant: gradients flow to ``x`` only.  Reflect
    padding makes constant inputs pass through unchanged.
    """
    if x.ndim != 4:
        raise ShapeError("gaussian_smooth expects NCHW input")
    if x.shape[2] < 1 or x.shape[3] < 1:
        raise ShapeError("empty spatial extent")
    if kernel is None:
        kernel = gaussian_kernel()
    c = x.shape[1]
    r = kernel.size // 2
    taps = np.broadcast_to(
        kernel.weights.astype(np.float32), (c, 1, kernel.size, kernel.size)
    ).copy()
    weight = Tensor(taps)
    spec = ConvSpec(c, c, kernel=(kernel.size, kernel.size), groups=c)
    padded = pad2d(x, (r, r, r, r), mode="reflect")
    return conv2d(padded, weight, None, spec)
