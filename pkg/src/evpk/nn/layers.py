"""Parameters, a small module system, and the layers built on tensor ops."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    __slots__ = ("init",)

    def __init__(self, data, name=None, init="custom"):
        super().__init__(data, requires_grad=True, name=name)
        self.init = init


def uniform_fan_in(rng, shape, fan_in, dtype=np.float64, name=None):
    bound = 1.0 / np.sqrt(fan_in)
    return Parameter(rng.uniform(-bound, bound, size=shape).astype(dtype), name, "uniform_fan_in")


def zeros(shape, dtype=np.float64, name=None):
    return Parameter(np.zeros(shape, dtype=dtype), name, "zeros")


def ones(shape, dtype=np.float64, name=None):
    return Parameter(np.ones(shape, dtype=dtype), name, "ones")


class Module:
    """Attribute-walking container for parameters, buffers and sub-modules.

    Buffers are plain numpy arrays registered through ``register_buffer``
    (batchnorm running statistics); they are checkpointed but not optimized.
    """

    def __init__(self):
        self._buffers = {}

    def register_buffer(self, name, value):
        self._buffers[name] = value

    def buffer(self, name):
        return self._buffers[name]

    def _children(self):
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, (Parameter, Module)):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix=""):
        for key, value in self._children():
            full = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield full, value
            else:
                yield from value.named_parameters(full + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for key, value in self._buffers.items():
            if value is not None:
                yield f"{prefix}{key}", value
        for key, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{key}.")

    def state_dict(self):
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state):
        for name, p in self.named_parameters():
            p.data = np.array(state[name], dtype=p.data.dtype).reshape(p.shape)
        self._load_buffers(state, "")

    def _load_buffers(self, state, prefix):
        for key in list(self._buffers):
            full = f"{prefix}{key}"
            if full in state:
                self._buffers[key] = np.array(state[full], dtype=np.float64)
        for key, value in self._children():
            if isinstance(value, Module):
                value._load_buffers(state, f"{prefix}{key}.")

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self


class Pointwise(Module):
    def __init__(self, c_in, c_out, rng, dtype=np.float64, bias=True):
        super().__init__()
        self.weight = uniform_fan_in(rng, (c_in, c_out), c_in, dtype)
        self.bias = zeros((c_out,), dtype) if bias else None

    def __call__(self, x):
        return T.pointwise_conv(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in, c_out, rng, k=3, stride=1, dtype=np.float64):
        super().__init__()
        if k % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {k}")
        self.k, self.stride = k, stride
        self.weight = uniform_fan_in(rng, (k, k, c_in, c_out), k * k * c_in, dtype)
        self.bias = zeros((c_out,), dtype)

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=(self.k - 1) // 2)


class BatchNorm(Module):
    def __init__(self, channels, dtype=np.float64, eps=1e-5, momentum=0.1):
        super().__init__()
        self.gamma = ones((channels,), dtype)
        self.beta = zeros((channels,), dtype)
        self.eps, self.momentum = eps, momentum
        self.register_buffer("running_mean", None)
        self.register_buffer("running_var", None)

    def __call__(self, x, training):
        if training and self._buffers["running_mean"] is None:
            c = self.gamma.shape[0]
            self._buffers["running_mean"] = np.zeros(c)
            self._buffers["running_var"] = np.ones(c)
        return T.batchnorm(x, self.gamma, self.beta, training,
                           self._buffers["running_mean"], self._buffers["running_var"],
                           eps=self.eps, momentum=self.momentum)
