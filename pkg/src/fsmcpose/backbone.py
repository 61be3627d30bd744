"""Backbone network: inverted residual units, the wavelet/Gaussian
frequency-enhancement block, the dilated receptive-aggregation block,
and the stage-wise assembly that maps a normalized image crop to a
stride-8 feature map.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import functional as F
from .modules import BatchNorm2d, ChannelLayerNorm, Conv2d, Module, ModuleList
from .tensor import Parameter, ShapeError, pad2d
from .wavelets import gaussian_kernel, gaussian_smooth, wtconv

__all__ = [
    "StageConfig",
    "ModelConfig",
    "InvertedResidual",
    "SFEBlock",
    "RABlock",
    "CattleMountNet",
    "desk_config",
    "config_to_text",
    "config_from_text",
    "save_config",
    "load_config",
]

STAGE_KINDS = ("inverted_residual", "sfe", "ra")


@dataclass(frozen=True)
class StageConfig:
    kind: str
    in_channels: int
    out_channels: int
    stride: int = 1
    expansion: int = 1

    def __post_init__(self):
        if self.kind not in STAGE_KINDS:
            raise ValueError(f"unknown stage kind '{self.kind}'")
        if self.stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {self.stride}")
        if self.kind in ("sfe", "ra"):
            if self.in_channels != self.out_channels:
                raise ValueError(f"{self.kind} stage must preserve channels")
            if self.stride != 1:
                raise ValueError(f"{self.kind} stage must have stride 1")
        if self.kind == "inverted_residual" and self.expansion < 1:
            raise ValueError("expansion ratio must be >= 1")


@dataclass(frozen=True)
class ModelConfig:
    """Declarative model description; round-trips through a key-value file."""

    input_width: int = 256
    input_height: int = 192
    stem_channels: int = 16
    stages: tuple = ()
    use_sfe: bool = True
    use_ra: bool = True
    use_sc2head: bool = True
    num_keypoints: int = 16
    split_ratio: float = 2.0
    reduction: int = 4

    def __post_init__(self):
        if self.input_width % 8 or self.input_height % 8:
            raise ValueError("input resolution must be divisible by the total stride 8")
        prev = self.stem_channels
        stride = 2  # stem
        for i, st in enumerate(self.stages):
            if st.in_channels != prev:
                raise ValueError(
                    f"stage {i} expects {st.in_channels} input channels, previous stage emits {prev}"
                )
            prev = st.out_channels
            stride *= st.stride
        if self.stages and stride != 8:
            raise ValueError(f"total backbone stride must be 8, got {stride}")

    @property
    def out_channels(self):
        return self.stages[-1].out_channels if self.stages else self.stem_channels

    @property
    def feature_hw(self):
        return self.input_height // 8, self.input_width // 8

    def effective_stages(self):
        """Stages actually built, honoring the block toggles."""
        out = []
        for st in self.stages:
            if st.kind == "sfe" and not self.use_sfe:
                continue
            if st.kind == "ra" and not self.use_ra:
                continue
            out.append(st)
        return tuple(out)

    def with_toggle(self, name):
        key = {"no-sfe": "use_sfe", "no-ra": "use_ra", "no-sc2head": "use_sc2head"}[name]
        return replace(self, **{key: False})


def desk_config():
    """Reference desk-scale configuration exercising every block kind."""
    return ModelConfig(
        stages=(
            StageConfig("inverted_residual", 16, 24, stride=2, expansion=4),
            StageConfig("inverted_residual", 24, 32, stride=2, expansion=4),
            StageConfig("sfe", 32, 32),
            StageConfig("inverted_residual", 32, 64, stride=1, expansion=4),
            StageConfig("ra", 64, 64),
        )
    )


# ------------------------------------------------------------- config file

_BOOL_KEYS = ("use_sfe", "use_ra", "use_sc2head")
_INT_KEYS = ("input_width", "input_height", "stem_channels", "num_keypoints", "reduction")


def config_to_text(cfg):
    lines = ["# model configuration"]
    for key in _INT_KEYS:
        lines.append(f"{key} = {getattr(cfg, key)}")
    lines.append(f"split_ratio = {cfg.split_ratio!r}")
    for key in _BOOL_KEYS:
        lines.append(f"{key} = {'true' if getattr(cfg, key) else 'false'}")
    for i, st in enumerate(cfg.stages):
        lines.append(
            f"stage{i} = {st.kind}:{st.in_channels}:{st.out_channels}:{st.stride}:{st.expansion}"
        )
    return "\n".join(lines) + "\n"


def config_from_text(text):
    values = {}
    stages = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith("stage"):
            stages[int(key[5:])] = value
        else:
            values[key] = value
    kwargs = {}
    for key in _INT_KEYS:
        if key in values:
            kwargs[key] = int(values.pop(key))
    if "split_ratio" in values:
        kwargs["split_ratio"] = float(values.pop("split_ratio"))
    for key in _BOOL_KEYS:
        if key in values:
            word = values.pop(key).lower()
            if word not in ("true", "false"):
                raise ValueError(f"boolean key '{key}' must be true/false, got {word!r}")
            kwargs[key] = word == "true"
    if values:
        raise ValueError(f"unknown config keys: {sorted(values)}")
    parsed = []
    for i in sorted(stages):
        parts = stages[i].split(":")
        if len(parts) != 5:
            raise ValueError(f"stage{i}: expected kind:in:out:stride:expansion, got {stages[i]!r}")
        parsed.append(
            StageConfig(parts[0], int(parts[1]), int(parts[2]), int(parts[3]), int(parts[4]))
        )
    kwargs["stages"] = tuple(parsed)
    return ModelConfig(**kwargs)


def save_config(path, cfg):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_to_text(cfg))


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_text(fh.read())


# ------------------------------------------------------------------ blocks


class ConvBNAct(Module):
    def __init__(self, in_ch, out_ch, kernel, *, stride=1, padding=0, groups=1, act, rng):
        super().__init__()
        self.conv = Conv2d(in_ch, out_ch, kernel, stride=stride, padding=padding,
                           groups=groups, bias=False, rng=rng)
        self.bn = BatchNorm2d(out_ch)
        self.act = act

    def forward(self, x):
        x = self.bn(self.conv(x))
        return F.activation(x, self.act) if self.act else x


class InvertedResidual(Module):
    """Expand (1x1) -> depthwise 3x3 -> linear project (1x1), with a skip
    connection when the stride is 1 and channel counts match."""

    def __init__(self, cfg, *, rng):
        super().__init__()
        hidden = cfg.in_channels * cfg.expansion
        self.use_residual = cfg.stride == 1 and cfg.in_channels == cfg.out_channels
        self.expand = (
            ConvBNAct(cfg.in_channels, hidden, 1, act="hardswish", rng=rng)
            if cfg.expansion > 1
            else None
        )
        self.depthwise = ConvBNAct(hidden, hidden, 3, stride=cfg.stride, padding=1,
                                   groups=hidden, act="hardswish", rng=rng)
        self.project = ConvBNAct(hidden, cfg.out_channels, 1, act=None, rng=rng)

    def forward(self, x):
        y = self.expand(x) if self.expand is not None else x
        y = self.project(self.depthwise(y))
        return y + x if self.use_residual else y


def kaiming_dw(rng):
    limit = np.sqrt(6.0 / 9.0)
    return rng.uniform(-limit, limit, size=(3, 3)).astype(np.float32)


class SFEBlock(Module):
    """Frequency-spatial enhancement: per-subband wavelet convolution,
    fixed Gaussian smoothing, 1x1 fusion and a gated 3x3 refinement with
    a residual connection.  Odd spatial sizes are symmetric-padded to
    even before analysis and cropped back after synthesis."""

    def __init__(self, channels, *, rng):
        super().__init__()
        self.channels = channels
        taps = [Parameter(np.stack([kaiming_dw(rng) for _ in range(channels)])[:, None])
                for _ in range(4)]
        self.kernel_ll, self.kernel_lh, self.kernel_hl, self.kernel_hh = taps
        self.fuse = Conv2d(channels, channels, 1, rng=rng)
        self.refine = Conv2d(channels, channels, 3, padding=1, rng=rng)
        self.gaussian = gaussian_kernel()

    def forward(self, x):
        h, w = x.shape[2], x.shape[3]
        pb, pr = h % 2, w % 2
        y = pad2d(x, (0, pb, 0, pr), mode="symmetric") if (pb or pr) else x
        f_wt = wtconv(y, (self.kernel_ll, self.kernel_lh, self.kernel_hl, self.kernel_hh))
        f_gauss = gaussian_smooth(f_wt, self.gaussian)
        f_tmp = self.fuse(f_wt + f_gauss)
        out = self.refine(f_wt * f_tmp)
        if pb or pr:
            out = out[:, :, :h, :w]
        return out + x


class RABlock(Module):
    """Multiscale receptive aggregation: a learnable channel bias feeds
    three parallel depthwise 3x3 convolutions at dilations 1/3/5; the
    summed branches are layer-normalized and added back to the input."""

    DILATIONS = (1, 3, 5)

    def __init__(self, channels, *, rng):
        super().__init__()
        self.channel_bias = Parameter(np.zeros((1, channels, 1, 1), dtype=np.float32))
        self.branches = ModuleList(
            Conv2d(channels, channels, 3, padding=d, dilation=d, groups=channels,
                   bias=False, rng=rng)
            for d in self.DILATIONS
        )
        self.norm = ChannelLayerNorm(channels)

    def forward(self, x):
        shifted = x + self.channel_bias
        total = None
        for branch in self.branches:
            y = F.hardswish(branch(shifted))
            total = y if total is None else total + y
        return self.norm(total) + x


class CattleMountNet(Module):
    """Stage-wise backbone; emits a stride-8 feature map."""

    def __init__(self, config, *, rng):
        super().__init__()
        self.config = config
        self.stem = ConvBNAct(3, config.stem_channels, 3, stride=2, padding=1,
                              act="hardswish", rng=rng)
        stages = []
        for st in config.effective_stages():
            if st.kind == "inverted_residual":
                stages.append(InvertedResidual(st, rng=rng))
            elif st.kind == "sfe":
                stages.append(SFEBlock(st.in_channels, rng=rng))
            else:
                stages.append(RABlock(st.in_channels, rng=rng))
        self.stages = ModuleList(stages)

    def forward(self, image):
        n, c, h, w = image.shape
        if c != 3:
            raise ShapeError(f"backbone expects 3-channel input, got {c}")
        if h != self.config.input_height or w != self.config.input_width:
            raise ShapeError(
                f"input resolution {w}x{h} does not match configured "
                f"{self.config.input_width}x{self.config.input_height}"
            )
        x = self.stem(image)
        for stage in self.stages:
            x = stage(x)
        return x
