"""Parameter containers: a small Module base plus Linear and LayerNorm."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import DEFAULT_DTYPE, Rng, Tensor, layer_norm, linear, xavier_uniform

LN_EPS = 1e-5


class Module:
    """Walks attributes in definition order to enumerate parameters.

    A parameter is any attribute holding a :class:`Tensor`; sub-modules and
    lists of sub-modules are descended into. Names join with dots.
    """

    training = False

    def named_parameters(self, prefix: str = "", _seen: set | None = None) -> Iterator[tuple[str, Tensor]]:
        # a tensor reachable under two names (shared weights) is listed once
        seen = set() if _seen is None else _seen
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if id(value) not in seen:
                    seen.add(id(value))
                    yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".", seen)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.", seen)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def trainable(self) -> list[Tensor]:
        return [p for p in self.parameters() if p.requires_grad]

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)


class Linear(Module):
    """y = x W + b with W stored as (in, out)."""

    def __init__(self, fan_in: int, fan_out: int, rng: Rng, dtype=DEFAULT_DTYPE, bias: bool = True):
        self.weight = Tensor(xavier_uniform((fan_in, fan_out), fan_in, fan_out, rng, dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(fan_out, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)

    def named_parameters(self, prefix: str = "", _seen: set | None = None):
        seen = set() if _seen is None else _seen
        for name in ("weight", "bias"):
            t = getattr(self, name)
            if t is not None and id(t) not in seen:
                seen.add(id(t))
                yield f"{prefix}{name}", t


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=DEFAULT_DTYPE):
        self.weight = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.weight, self.bias, LN_EPS)
