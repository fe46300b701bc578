"""Parameter containers and the layers the separator and detector use."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import ops
from .tensor import Tensor

LEAKY_SLOPE = 0.01


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name=None):
        super().__init__(data, requires_grad=True, name=name)


class Buffer(Tensor):
    """Non-trainable state saved with the model (batchnorm running stats)."""

    __slots__ = ()

    def __init__(self, data, name=None):
        super().__init__(data, requires_grad=False, name=name)


class Module:
    training = True

    def _children(self):
        for key, value in vars(self).items():
            if isinstance(value, (Module, Tensor)):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item

    def _walk(self, kind, prefix="") -> Iterator[tuple[str, Tensor]]:
        for key, value in self._children():
            name = f"{prefix}{key}"
            if isinstance(value, Module):
                yield from value._walk(kind, name + ".")
            elif isinstance(value, kind):
                yield name, value

    def named_parameters(self) -> dict[str, Parameter]:
        return dict(self._walk(Parameter))

    def named_buffers(self) -> dict[str, Buffer]:
        return dict(self._walk(Buffer))

    def state(self) -> dict[str, Tensor]:
        """Every persistent tensor, parameters then buffers."""
        return {**self.named_parameters(), **self.named_buffers()}

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        for t in self.state().values():
            t.data = t.data.astype(dtype)
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32):
    gain = math.sqrt(2.0 / (1.0 + LEAKY_SLOPE ** 2))
    bound = gain * math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, cin, cout, kernel, rng, dtype=np.float32):
        self.weight = Parameter(kaiming_uniform(rng, (kernel, kernel, cin, cout),
                                                kernel * kernel * cin, dtype))
        self.bias = Parameter(np.zeros(cout, dtype=dtype))

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias)


class Conv1d(Module):
    def __init__(self, cin, cout, kernel, rng, dtype=np.float32):
        self.weight = Parameter(kaiming_uniform(rng, (kernel, cin, cout), kernel * cin, dtype))
        self.bias = Parameter(np.zeros(cout, dtype=dtype))

    def forward(self, x):
        return ops.conv1d(x, self.weight, self.bias)


class BatchNorm(Module):
    def __init__(self, channels, dtype=np.float32, momentum=0.9, eps=1e-5):
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.running_mean = Buffer(np.zeros(channels, dtype=dtype))
        self.running_var = Buffer(np.ones(channels, dtype=dtype))
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        return ops.batchnorm(x, self.gamma, self.beta, self.running_mean.data,
                             self.running_var.data, self.training, self.momentum, self.eps)
