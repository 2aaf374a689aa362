"""Tiny module system: parameter registry, conv / batch-norm / linear layers."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    training = True

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for k, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{k}", item
            elif isinstance(value, dict):
                for k, item in value.items():
                    if isinstance(item, Module):
                        yield f"{name}.{k}", item

    def own_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value

    def own_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(())

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self.own_parameters():
            yield prefix + name, p
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self.own_buffers():
            yield prefix + name, b
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters().values())

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def after_step(self) -> None:
        """Hook run after every optimizer update (parameter clamps)."""
        for _, child in self.children():
            child.after_step()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def kaiming_normal(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    return rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, weight: np.ndarray | None = None):
        w = kaiming_normal(rng, (cout, cin, k, k)) if weight is None else weight
        self.weight = Tensor(w, requires_grad=True)
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.stride, self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels: int):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def own_buffers(self):
        yield "running_mean", self.running_mean
        yield "running_var", self.running_var

    def forward(self, x: Tensor) -> Tensor:
        return T.batch_norm2d(x, self.gamma, self.beta, self.running_mean,
                              self.running_var, training=self.training)


class Linear(Module):
    def __init__(self, fin: int, fout: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(fin)
        self.weight = Tensor(rng.uniform(-bound, bound, (fin, fout)), requires_grad=True)
        self.bias = Tensor(rng.uniform(-bound, bound, (fout,)), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return T.matmul(x, self.weight) + self.bias
