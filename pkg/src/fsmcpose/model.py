"""Full pose model: backbone, optional fused-attention stage, and the
coordinate-classification output head."""

from __future__ import annotations

import numpy as np

from .backbone import CattleMountNet, ModelConfig
from .checkpoint import load_tensors, save_tensors
from .head import HeadConfig, SC2Head, SimCCHead
from .modules import Module

__all__ = ["PoseModel", "build_model", "head_config_for"]


def head_config_for(config):
    return HeadConfig(
        in_channels=config.out_channels,
        input_width=config.input_width,
        input_height=config.input_height,
        num_keypoints=config.num_keypoints,
        split_ratio=config.split_ratio,
        reduction=config.reduction,
    )


class PoseModel(Module):
    def __init__(self, config, *, rng):
        super().__init__()
        self.config = config
        self.backbone = CattleMountNet(config, rng=rng)
        self.attention = (
            SC2Head(config.out_channels, config.reduction, rng=rng)
            if config.use_sc2head
            else None
        )
        self.head_cfg = head_config_for(config)
        self.head = SimCCHead(self.head_cfg, config.feature_hw, rng=rng)

    def forward(self, image):
        features = self.backbone(image)
        if self.attention is not None:
            features = self.attention(features)
        return self.head(features)

    def save(self, path, include_buffers=True):
        save_tensors(path, self.state_tensors(include_buffers=include_buffers))

    def load(self, path):
        self.load_state(load_tensors(path))


def build_model(config, seed=0):
    """Deterministically initialize a model for the given configuration."""
    if not isinstance(config, ModelConfig):
        raise TypeError("config must be a ModelConfig")
    rng = np.random.default_rng(seed)
    return PoseModel(config, rng=rng)
