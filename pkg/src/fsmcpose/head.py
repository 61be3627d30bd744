"""Prediction head: spatial attention, split channel attention, a
self-calibration gate, their fused residual combination, and the
coordinate-classification output layers with encoding, decoding and the
training loss.

Coordinates are represented as 1-D classification problems over
sub-pixel bins (``split_ratio`` bins per pixel); the decoder takes the
argmax bin and reports a confidence from the per-axis distribution
peaks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .modules import BatchNorm2d, Conv2d, Linear, Module
from .tensor import ShapeError, Tensor, concat

__all__ = [
    "HeadConfig",
    "KeypointPrediction",
    "SpatialAttention",
    "ChannelAttention",
    "SelfCalibration",
    "SC2Head",
    "SimCCHead",
    "encode_targets",
    "simcc_decode",
    "simcc_loss",
    "clamp_warnings",
    "reset_clamp_warnings",
]

TARGET_SIGMA_BINS = 6.0

# Ground-truth coordinates outside the crop are clamped to the edge bin;
# each occurrence bumps this counter.
_clamp_warnings = 0


def clamp_warnings():
    return _clamp_warnings


def reset_clamp_warnings():
    global _clamp_warnings
    _clamp_warnings = 0


@dataclass(frozen=True)
class HeadConfig:
    in_channels: int
    input_width: int = 256
    input_height: int = 192
    num_keypoints: int = 16
    split_ratio: float = 2.0
    reduction: int = 4

    def __post_init__(self):
        if self.x_bins < 1 or self.y_bins < 1:
            raise ValueError("bin counts must be >= 1")
        if self.num_keypoints < 1:
            raise ValueError("need at least one keypoint")

    @property
    def x_bins(self):
        return int(round(self.input_width * self.split_ratio))

    @property
    def y_bins(self):
        return int(round(self.input_height * self.split_ratio))


@dataclass
class KeypointPrediction:
    """Decoded keypoints for one instance, in crop-frame pixels."""

    xy: np.ndarray  # (K, 2)
    scores: np.ndarray  # (K,), each in [0, 1]


class SpatialAttention(Module):
    """Channel-axis avg/max maps -> 3x3 conv -> sigmoid gate on the input."""

    def __init__(self, *, rng):
        super().__init__()
        self.conv = Conv2d(2, 1, 3, padding=1, rng=rng)

    def forward(self, x):
        pooled = concat([F.channel_avg_pool(x), F.channel_max_pool(x)], axis=1)
        gate = F.sigmoid(self.conv(pooled))
        return x * gate


class _GateBranch(Module):
    """conv -> BN -> relu -> conv -> sigmoid bottleneck on a descriptor."""

    def __init__(self, channels, reduction, *, rng):
        super().__init__()
        mid = channels // reduction
        self.squeeze = Conv2d(channels, mid, 1, rng=rng)
        self.bn = BatchNorm2d(mid)
        self.excite = Conv2d(mid, channels, 1, rng=rng)

    def forward(self, x):
        y = F.relu(self.bn(self.squeeze(x)))
        return F.sigmoid(self.excite(y))


class ChannelAttention(Module):
    """Global avg/max descriptors mixed jointly, then split into two
    gating branches whose sigmoid outputs both scale the input."""

    def __init__(self, channels, reduction=4, *, rng):
        super().__init__()
        if channels % reduction:
            raise ValueError(
                f"channels ({channels}) must be divisible by reduction ({reduction})"
            )
        self.channels = channels
        self.mix = Conv2d(2 * channels, 2 * channels, 1, bias=False, rng=rng)
        self.mix_bn = BatchNorm2d(2 * channels)
        self.gate_avg = _GateBranch(channels, reduction, rng=rng)
        self.gate_max = _GateBranch(channels, reduction, rng=rng)

    def forward(self, x):
        desc = concat([F.global_avg_pool2d(x), F.global_max_pool2d(x)], axis=1)
        mixed = F.leaky_relu(self.mix_bn(self.mix(desc)))
        x_a = mixed[:, : self.channels]
        x_m = mixed[:, self.channels :]
        return x * self.gate_avg(x_a) * self.gate_max(x_m)


class SelfCalibration(Module):
    """sigmoid(x + avgpool(conv(upsample_x2(x)))): a smooth, contextual
    gate bounded to (0, 1)."""

    def __init__(self, channels, *, rng):
        super().__init__()
        self.conv = Conv2d(channels, channels, 3, padding=1, groups=channels,
                           bias=False, rng=rng)

    def forward(self, x):
        y = F.avg_pool2d(self.conv(F.bilinear_upsample_x2(x)), 2, 2)
        return F.sigmoid(x + y)


class SC2Head(Module):
    """Fuse spatial and channel attention under the self-calibration gate:
    conv1x1(concat[SA, CA] * tiled SC) + x."""

    def __init__(self, channels, reduction=4, *, rng):
        super().__init__()
        self.sab = SpatialAttention(rng=rng)
        self.cab = ChannelAttention(channels, reduction, rng=rng)
        self.scb = SelfCalibration(channels, rng=rng)
        self.fuse = Conv2d(2 * channels, channels, 1, rng=rng)

    def forward(self, x):
        sa = self.sab(x)
        ca = self.cab(x)
        sc = self.scb(x)
        gated = concat([sa, ca], axis=1) * concat([sc, sc], axis=1)
        return self.fuse(gated) + x


class SimCCHead(Module):
    """1x1 conv to per-keypoint maps, then shared linear projections from
    the flattened map to the x/y bin logits."""

    def __init__(self, cfg, feature_hw, *, rng):
        super().__init__()
        self.cfg = cfg
        self.feature_hw = feature_hw
        flat = feature_hw[0] * feature_hw[1]
        self.to_keypoints = Conv2d(cfg.in_channels, cfg.num_keypoints, 1, rng=rng)
        self.x_proj = Linear(flat, cfg.x_bins, rng=rng)
        self.y_proj = Linear(flat, cfg.y_bins, rng=rng)

    def forward(self, features):
        n = features.shape[0]
        h, w = self.feature_hw
        if (features.shape[2], features.shape[3]) != (h, w):
            raise ShapeError(
                f"head expects {h}x{w} features, got {features.shape[2]}x{features.shape[3]}"
            )
        maps = self.to_keypoints(features)
        flat = maps.reshape(n, self.cfg.num_keypoints, h * w)
        return self.x_proj(flat), self.y_proj(flat)


def _axis_targets(coords, bins, ratio):
    """Per-keypoint Gaussian target rows over ``bins`` sub-pixel bins."""
    global _clamp_warnings
    scaled = np.asarray(coords, dtype=np.float64) * ratio
    clamped = np.clip(scaled, 0.0, bins - 1.0)
    _clamp_warnings += int((scaled != clamped).sum())
    grid = np.arange(bins, dtype=np.float64)[None, :]
    t = np.exp(-((grid - clamped[:, None]) ** 2) / (2.0 * TARGET_SIGMA_BINS**2))
    t /= t.sum(axis=1, keepdims=True)
    return t.astype(np.float32)


def encode_targets(keypoints_xy, cfg):
    """Build (K, x_bins) and (K, y_bins) soft target distributions."""
    kp = np.asarray(keypoints_xy, dtype=np.float32)
    tx = _axis_targets(kp[:, 0], cfg.x_bins, cfg.split_ratio)
    ty = _axis_targets(kp[:, 1], cfg.y_bins, cfg.split_ratio)
    return tx, ty


def simcc_loss(x_logits, y_logits, gt_keypoints, visibility, cfg):
    """Soft cross-entropy against Gaussian bin targets, masked to visible
    keypoints and averaged over them; returns a scalar tensor.

    ``gt_keypoints``: (N, K, 2) crop-frame pixels; ``visibility``:
    (N, K) with the usual 0/1/2 levels (anything > 0 counts).
    """
    n, k = x_logits.shape[0], x_logits.shape[1]
    vis = np.asarray(visibility, dtype=np.float32).reshape(n, k)
    mask = (vis > 0).astype(np.float32)
    total_visible = float(mask.sum())
    if total_visible == 0.0:
        return Tensor(0.0)
    gt = np.asarray(gt_keypoints, dtype=np.float32).reshape(n, k, 2)
    tx = np.stack([_axis_targets(gt[i, :, 0], cfg.x_bins, cfg.split_ratio) for i in range(n)])
    ty = np.stack([_axis_targets(gt[i, :, 1], cfg.y_bins, cfg.split_ratio) for i in range(n)])
    log_px = F.log_softmax(x_logits, axis=2)
    log_py = F.log_softmax(y_logits, axis=2)
    mask_t = Tensor(mask)
    ce_x = -(Tensor(tx) * log_px).sum(axis=2)
    ce_y = -(Tensor(ty) * log_py).sum(axis=2)
    return ((ce_x + ce_y) * mask_t).sum() / total_visible


def simcc_decode(x_logits, y_logits, cfg):
    """Argmax-bin decoding to crop-frame pixels.

    Score is the geometric mean of the per-axis softmax peaks; ties
    resolve to the lowest bin index.
    """
    xl = x_logits.data if isinstance(x_logits, Tensor) else np.asarray(x_logits)
    yl = y_logits.data if isinstance(y_logits, Tensor) else np.asarray(y_logits)
    if not (np.isfinite(xl).all() and np.isfinite(yl).all()):
        raise ValueError("logits must be finite")
    squeeze = xl.ndim == 2
    if squeeze:
        xl, yl = xl[None], yl[None]

    def peaks(logits):
        shifted = logits - logits.max(axis=2, keepdims=True)
        p = np.exp(shifted)
        p /= p.sum(axis=2, keepdims=True)
        idx = np.argmax(logits, axis=2)
        peak = np.take_along_axis(p, idx[:, :, None], axis=2)[:, :, 0]
        return idx, peak

    ix, px = peaks(xl)
    iy, py = peaks(yl)
    preds = []
    for i in range(xl.shape[0]):
        xy = np.stack([ix[i] / cfg.split_ratio, iy[i] / cfg.split_ratio], axis=1)
        preds.append(
            KeypointPrediction(xy=xy.astype(np.float64), scores=np.sqrt(px[i] * py[i]).astype(np.float64))
        )
    return preds[0] if squeeze else preds
