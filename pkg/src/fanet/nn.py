"""Minimal module system: named parameters, conv and norm layers, init."""
import math

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Parameter


class Module:
    """Container whose Parameter and Module attributes form a named tree.

    Registration order is attribute assignment order, so parameter names and
    initialisation order are stable for a given constructor.
    """

    def __setattr__(self, key, value):
        if isinstance(value, (Parameter, Module)):
            self.__dict__.setdefault("_children", {})[key] = value
        object.__setattr__(self, key, value)

    def named_parameters(self, prefix=""):
        for key, child in self.__dict__.get("_children", {}).items():
            path = f"{prefix}{key}"
            if isinstance(child, Parameter):
                yield path, child
            else:
                yield from child.named_parameters(path + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def assign_names(self, prefix=""):
        for name, p in self.named_parameters(prefix):
            p.name = name
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype):
        """Cast every parameter in place (used for the 64-bit gradcheck replay)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            if p.grad is not None:
                p.grad = p.grad.astype(dtype)
        return self

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state, strict=True):
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            if missing or extra:
                raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, arr in state.items():
            if name not in own:
                continue
            p = own[name]
            if tuple(arr.shape) != p.shape:
                raise ShapeError(f"{name}: stored {arr.shape} vs model {p.shape}", dimension=name)
            p.data = np.array(arr, dtype=p.dtype)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def kaiming_uniform(rng, shape, fan_in, dtype=np.float32):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    """Conv layer with Kaiming-uniform (fan-in) weights and zero bias."""

    def __init__(self, rng, in_ch, out_ch, kernel=1, stride=1, padding=None, dilation=1,
                 bias=True, pad_mode="replicate"):
        if padding is None:
            padding = dilation * (kernel - 1) // 2
        self.stride = stride
        self.padding = padding
        self.dilation = dilation
        self.pad_mode = pad_mode
        fan_in = in_ch * kernel * kernel
        self.weight = Parameter(kaiming_uniform(rng, (out_ch, in_ch, kernel, kernel), fan_in))
        if bias:
            self.bias = Parameter(np.zeros(out_ch, dtype=np.float32))
        else:
            self.bias = None

    @property
    def in_channels(self):
        return self.weight.shape[1]

    @property
    def out_channels(self):
        return self.weight.shape[0]

    def set_identity(self, gain=1.0):
        """Centre-tap identity kernel (requires in == out channels and odd kernel)."""
        o, i, kh, kw = self.weight.shape
        w = np.zeros_like(self.weight.data)
        for c in range(min(o, i)):
            w[c, c, kh // 2, kw // 2] = gain
        self.weight.data = w
        if self.bias is not None:
            self.bias.data = np.zeros_like(self.bias.data)
        return self

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.dilation,
                        self.pad_mode)


class ConvReLU(Conv2d):
    def forward(self, x):
        return T.relu(super().forward(x))


class LayerNorm2d(Module):
    """Layer normalisation across channels of a (B, C, H, W) map."""

    def __init__(self, channels, eps=1e-5):
        self.eps = eps
        self.weight = Parameter(np.ones(channels, dtype=np.float32))
        self.bias = Parameter(np.zeros(channels, dtype=np.float32))

    def forward(self, x):
        return T.layer_norm_channels(x, self.weight, self.bias, self.eps)


class Identity(Module):
    def forward(self, x):
        return x
