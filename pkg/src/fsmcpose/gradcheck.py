"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from .tensor import NumericError, Tensor

__all__ = ["grad_check"]


def grad_check(fn, x, eps=1e-3):
    """Compare the tape gradient of ``fn`` (tensor -> scalar) at ``x``
    against central finite differences.

    Returns the worst elementwise relative error, with a 1e-6 absolute
    floor in the denominator.  Differences are accumulated in 64-bit even
    though ``fn`` itself evaluates in the library's 32-bit pipeline.
    """
    probe = Tensor(x.data.copy(), requires_grad=True)
    out = fn(probe)
    if out.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    if not np.isfinite(out.data).all():
        raise NumericError("function returned non-finite value")
    out.backward()
    analytic = probe.grad.astype(np.float64)

    flat = x.data.reshape(-1)
    numeric = np.zeros(flat.size, dtype=np.float64)
    for i in range(flat.size):
        orig = flat[i]
        for sign, slot in ((+1.0, 0), (-1.0, 1)):
            perturbed = flat.copy()
            perturbed[i] = orig + sign * eps
            val = fn(Tensor(perturbed.reshape(x.shape))).data
            if not np.isfinite(val).all():
                raise NumericError("function returned non-finite value")
            if slot == 0:
                plus = float(val)
            else:
                minus = float(val)
        numeric[i] = (plus - minus) / (2.0 * eps)

    numeric = numeric.reshape(x.shape)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / denom))
