"""Layer containers on top of :mod:`spikeflow.tensor`.

Convolution layers accept either ``(N, C, H, W)`` or time-major
``(T, B, C, H, W)`` input; in the latter case time is folded into the batch.
Linear layers act on the last axis of any input.
"""

from __future__ import annotations

import math

import numpy as np

from . import energy
from . import tensor as F
from .tensor import Tensor


class Parameter(Tensor):
    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


def _rng(rng):
    return rng if rng is not None else np.random.default_rng(0)


def kaiming_uniform(shape, fan_in, rng):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Module:
    """Minimal module base: attribute-discovered parameters and submodules."""

    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self):
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield key, val
            elif isinstance(val, (list, tuple)) and val and all(isinstance(v, Module) for v in val):
                for i, v in enumerate(val):
                    yield f"{key}.{i}", v

    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            if isinstance(val, Parameter):
                yield prefix + key, val
        for key, child in self._children():
            yield from child.named_parameters(prefix + key + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_modules(self, prefix=""):
        yield prefix.rstrip("."), self
        for key, child in self._children():
            yield from child.named_modules(prefix + key + ".")

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype).copy()


class Linear(Module):
    def __init__(self, in_features, out_features, bias=True, rng=None):
        rng = _rng(rng)
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(kaiming_uniform((out_features, in_features), in_features, rng))
        self.bias = Parameter(np.zeros(out_features, np.float32)) if bias else None

    def flops(self, x_shape):
        tokens = int(np.prod(x_shape[2:-1])) if len(x_shape) > 2 else 1
        return energy.count_flops(
            {"kind": "linear", "n_in": self.in_features, "n_out": self.out_features, "tokens": tokens}
        )

    def forward(self, x):
        energy.record(self, x, self.flops(x.shape))
        return F.linear(x, self.weight, self.bias)


def _fold(x):
    if x.ndim == 5:
        t, b = x.shape[:2]
        return F.reshape(x, (t * b,) + x.shape[2:]), (t, b)
    return x, None


def _unfold(y, lead):
    if lead is None:
        return y
    return F.reshape(y, lead + y.shape[1:])


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel_size, stride=1, padding=0, bias=True, rng=None):
        rng = _rng(rng)
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel_size, self.stride, self.padding = kernel_size, stride, padding
        fan_in = in_ch * kernel_size * kernel_size
        self.weight = Parameter(kaiming_uniform((out_ch, in_ch, kernel_size, kernel_size), fan_in, rng))
        self.bias = Parameter(np.zeros(out_ch, np.float32)) if bias else None

    def out_size(self, h, w):
        k, s, p = self.kernel_size, self.stride, self.padding
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def flops(self, x_shape):
        oh, ow = self.out_size(*x_shape[-2:])
        return energy.count_flops(
            {"kind": "conv", "k": self.kernel_size, "c_in": self.in_ch, "c_out": self.out_ch, "h_out": oh, "w_out": ow}
        )

    def forward(self, x):
        energy.record(self, x, self.flops(x.shape))
        xf, lead = _fold(x)
        y = F.conv2d(xf, self.weight, self.bias, self.stride, self.padding)
        return _unfold(y, lead)


class ConvTranspose2d(Module):
    def __init__(self, in_ch, out_ch, kernel_size, stride=1, padding=0, output_padding=0, bias=True, rng=None):
        rng = _rng(rng)
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel_size, self.stride = kernel_size, stride
        self.padding, self.output_padding = padding, output_padding
        fan_in = in_ch * kernel_size * kernel_size
        self.weight = Parameter(kaiming_uniform((in_ch, out_ch, kernel_size, kernel_size), fan_in, rng))
        self.bias = Parameter(np.zeros(out_ch, np.float32)) if bias else None

    def flops(self, x_shape):
        # every input pixel scatters a k x k x C_out patch
        h, w = x_shape[-2:]
        return energy.count_flops(
            {"kind": "conv_transpose", "k": self.kernel_size, "c_in": self.in_ch, "c_out": self.out_ch, "h_in": h, "w_in": w}
        )

    def forward(self, x):
        energy.record(self, x, self.flops(x.shape))
        xf, lead = _fold(x)
        y = F.conv_transpose2d(xf, self.weight, self.bias, self.stride, self.padding, self.output_padding)
        return _unfold(y, lead)


class BatchNorm(Module):
    """Batch normalisation over one channel axis using per-batch statistics only."""

    def __init__(self, num_features, axis=1, eps=1e-5):
        self.num_features = num_features
        self.axis = axis
        self.eps = eps
        self.weight = Parameter(np.ones(num_features, np.float32))
        self.bias = Parameter(np.zeros(num_features, np.float32))

    def forward(self, x):
        ax = self.axis if self.axis < 0 or x.ndim < 5 else self.axis + 1
        return F.batch_norm(x, self.weight, self.bias, axis=ax, eps=self.eps)


def BatchNorm2d(c):
    """BN for (N, C, H, W) or (T, B, C, H, W) conv features."""
    return BatchNorm(c, axis=1)


def BatchNorm1d(c):
    """BN over the trailing feature axis of token tensors."""
    return BatchNorm(c, axis=-1)


class Sequential(Module):
    def __init__(self, *layers):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x
