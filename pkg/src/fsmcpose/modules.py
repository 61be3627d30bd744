"""Parameter-holding layer modules.

A module owns :class:`~fsmcpose.tensor.Parameter` leaves plus
non-learnable buffers (batch-norm running statistics) and composes into
trees.  Weights are initialized from an explicit numpy ``Generator`` so
model construction is deterministic given a seed.  Biases and norm
offsets start at zero, which makes the textbook zero-weight identity
checks of the residual blocks exact.
"""

from __future__ import annotations

import numpy as np

from . import functional as F
from . import trace
from .functional import ConvSpec, RunningStats
from .tensor import Parameter, Tensor

__all__ = [
    "Module",
    "ModuleList",
    "Conv2d",
    "BatchNorm2d",
    "ChannelLayerNorm",
    "Linear",
    "kaiming_uniform",
]


def kaiming_uniform(rng, shape, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


class Module:
    def __init__(self):
        self.training = True

    # ------------------------------------------------------------ traversal
    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value

    def named_modules(self, prefix=""):
        yield prefix, self
        for name, child in self._children():
            path = f"{prefix}.{name}" if prefix else name
            yield from child.named_modules(path)

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield (f"{prefix}.{name}" if prefix else name), value
        for name, child in self._children():
            path = f"{prefix}.{name}" if prefix else name
            yield from child.named_parameters(path)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, RunningStats) and value.initialized:
                path = f"{prefix}.{name}" if prefix else name
                yield f"{path}.running_mean", value.mean
                yield f"{path}.running_var", value.var
        for name, child in self._children():
            path = f"{prefix}.{name}" if prefix else name
            yield from child.named_buffers(path)

    # ----------------------------------------------------------------- mode
    def train(self, flag=True):
        for _, m in self.named_modules():
            m.training = flag
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    # ---------------------------------------------------------------- state
    def state_tensors(self, include_buffers=True):
        """Ordered name -> array mapping for checkpointing."""
        state = {name: p.data for name, p in self.named_parameters()}
        if include_buffers:
            state.update(dict(self.named_buffers()))
        return state

    def load_state(self, tensors):
        """Load arrays produced by :meth:`state_tensors` (names must match)."""
        params = dict(self.named_parameters())
        buffers = {}
        for name, value in vars_buffers(self):
            buffers[name] = value
        seen = set()
        for name, arr in tensors.items():
            if name in params:
                p = params[name]
                if tuple(arr.shape) != tuple(p.shape):
                    raise ValueError(
                        f"shape mismatch for '{name}': checkpoint {arr.shape}, model {tuple(p.shape)}"
                    )
                p.data = np.ascontiguousarray(arr, dtype=np.float32)
                seen.add(name)
            elif name in buffers:
                stats, slot = buffers[name]
                setattr(stats, slot, np.ascontiguousarray(arr, dtype=np.float32))
                seen.add(name)
            else:
                raise ValueError(f"checkpoint tensor '{name}' has no matching state")
        missing = set(params) - seen
        if missing:
            raise ValueError(f"checkpoint missing parameters: {sorted(missing)}")

    def __call__(self, *args, **kwargs):
        if trace.is_tracing():
            with trace.scope(getattr(self, "_trace_name", type(self).__name__)):
                return self.forward(*args, **kwargs)
        return self.forward(*args, **kwargs)


def vars_buffers(module, prefix=""):
    """Yield (dotted-name, (RunningStats, slot)) pairs for every buffer."""
    for name, value in vars(module).items():
        if isinstance(value, RunningStats):
            path = f"{prefix}.{name}" if prefix else name
            yield f"{path}.running_mean", (value, "mean")
            yield f"{path}.running_var", (value, "var")
    for name, child in module._children():
        path = f"{prefix}.{name}" if prefix else name
        yield from vars_buffers(child, path)


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items = []
        for m in modules:
            self.append(m)

    def append(self, module):
        setattr(self, str(len(self._items)), module)
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def forward(self, x):
        for m in self._items:
            x = m(x)
        return x


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel, *, stride=1, padding=0,
                 dilation=1, groups=1, bias=True, rng):
        super().__init__()
        self.spec = ConvSpec(in_channels, out_channels, kernel=kernel, stride=stride,
                             padding=padding, dilation=dilation, groups=groups)
        kh, kw = self.spec.kernel
        fan_in = (in_channels // groups) * kh * kw
        self.weight = Parameter(kaiming_uniform(rng, self.spec.weight_shape(), fan_in))
        self.bias = Parameter(np.zeros(out_channels, dtype=np.float32)) if bias else None

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, self.spec)


class BatchNorm2d(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, dtype=np.float32))
        self.beta = Parameter(np.zeros(channels, dtype=np.float32))
        self.stats = RunningStats(channels)

    def forward(self, x):
        return F.batch_norm(x, self.gamma, self.beta, self.stats, self.training,
                            momentum=self.momentum, eps=self.eps)


class ChannelLayerNorm(Module):
    """Layer norm over the channel vector at each spatial location."""

    def __init__(self, channels, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, dtype=np.float32))
        self.beta = Parameter(np.zeros(channels, dtype=np.float32))

    def forward(self, x):
        return F.layer_norm(x, self.gamma, self.beta, eps=self.eps)


class Linear(Module):
    def __init__(self, in_features, out_features, *, bias=True, rng):
        super().__init__()
        limit = np.sqrt(1.0 / in_features)
        self.weight = Parameter(
            rng.uniform(-limit, limit, size=(in_features, out_features)).astype(np.float32)
        )
        self.bias = Parameter(np.zeros(out_features, dtype=np.float32)) if bias else None

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)
