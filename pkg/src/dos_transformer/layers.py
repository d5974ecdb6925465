"""Small dense building blocks with checkpoint-friendly parameter names."""

from __future__ import annotations

import math

import torch
from torch import nn
import torch.nn.functional as F

DTYPE = torch.float64

ACTIVATIONS = {
    "softplus": F.softplus,
    "relu": F.relu,
    "tanh": torch.tanh,
    "identity": lambda x: x,
}


def activation(name: str):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


class MLP(nn.Module):
    """Affine layers ``w0, b0, w1, b1, ...`` with ``y = x @ w + b``.

    The nonlinearity follows every hidden layer; ``act_last`` also applies it
    after the output layer.
    """

    def __init__(self, sizes, act: str = "softplus", act_last: bool = False,
                 generator: torch.Generator | None = None):
        super().__init__()
        if len(sizes) < 2:
            raise ValueError("MLP needs at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        self.act_name = act
        self.act = activation(act)
        self.act_last = act_last
        for k, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            bound = 1.0 / math.sqrt(fan_in) if fan_in else 0.0
            w = (torch.rand(fan_in, fan_out, generator=generator, dtype=DTYPE) * 2 - 1) * bound
            b = (torch.rand(fan_out, generator=generator, dtype=DTYPE) * 2 - 1) * bound
            self.register_parameter(f"w{k}", nn.Parameter(w))
            self.register_parameter(f"b{k}", nn.Parameter(b))

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for k in range(self.n_layers):
            x = x @ getattr(self, f"w{k}") + getattr(self, f"b{k}")
            if k < self.n_layers - 1 or self.act_last:
                x = self.act(x)
        return x


def mlp_param_count(sizes) -> int:
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
