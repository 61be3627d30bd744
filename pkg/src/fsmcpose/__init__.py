"""Lightweight frequency-spatial pose estimation stack.

From-scratch float32 tensor core with reverse-mode differentiation,
wavelet/Gaussian and multiscale backbone blocks, a spatial-channel
self-calibration head with coordinate-classification outputs, COCO
keypoint data tooling, OKS/AP/AR metrics, an analytic cost profiler and
an inference benchmark, all tied together by a CLI.
"""

__version__ = "0.1.0"

from .tensor import NumericError, Parameter, ShapeError, Tensor, no_grad

__all__ = [
    "__version__",
    "Tensor",
    "Parameter",
    "NumericError",
    "ShapeError",
    "no_grad",
]
