"""Parameterized layers: linear, 1D convolution, residual block, MLP."""

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Container that discovers parameters from its attributes, in
    attribute-definition order (stable across runs)."""

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.astype(p.dtype)

    def astype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(arr):
    return Tensor(np.asarray(arr, dtype=T.get_default_dtype()), requires_grad=True)


class Linear(Module):
    """y = x @ W + b over the last axis."""

    def __init__(self, n_in, n_out, rng, bias=True):
        bound = 1.0 / np.sqrt(n_in)
        self.weight = _param(rng.uniform(-bound, bound, size=(n_in, n_out)))
        self.bias = _param(rng.uniform(-bound, bound, size=(n_out,))) if bias else None

    def forward(self, x):
        y = T.matmul(x, self.weight)
        return y if self.bias is None else y + self.bias


class Conv1d(Module):
    def __init__(self, c_in, c_out, rng, kernel_size=3):
        bound = 1.0 / np.sqrt(c_in * kernel_size)
        self.weight = _param(rng.uniform(-bound, bound, size=(c_out, c_in, kernel_size)))
        self.bias = _param(rng.uniform(-bound, bound, size=(c_out,)))

    def forward(self, x):
        return T.conv1d(x, self.weight, self.bias)


class ResBlock(Module):
    """x + conv(gelu(conv(gelu(x))))"""

    def __init__(self, channels, rng, kernel_size=3):
        self.conv1 = Conv1d(channels, channels, rng, kernel_size)
        self.conv2 = Conv1d(channels, channels, rng, kernel_size)

    def forward(self, x):
        h = self.conv1(T.gelu(x))
        h = self.conv2(T.gelu(h))
        return x + h


class MLP(Module):
    """Two linear layers with a GELU in between."""

    def __init__(self, n_in, n_hidden, n_out, rng):
        self.fc1 = Linear(n_in, n_hidden, rng)
        self.fc2 = Linear(n_hidden, n_out, rng)

    def forward(self, x):
        return self.fc2(T.gelu(self.fc1(x)))
