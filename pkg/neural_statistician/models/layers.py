# neural_statistician/models/layers.py
"""
Dense building blocks on top of the tensor engine.

Dense layers accept inputs of any rank >= 2 and act on the last axis.
Weights are He-initialized, N(0, 2 / fan_in); biases start at zero.
"""

from __future__ import annotations

from typing import Callable, Dict, List

import numpy as np

from neural_statistician.core.optim import Parameter
from neural_statistician.core.tensor import ShapeError, Tensor, elu, relu, reshape

ACTIVATIONS: Dict[str, Callable[[Tensor], Tensor]] = {"relu": relu, "elu": elu}


class Dense:
    def __init__(self, name: str, in_dim: int, out_dim: int, rng: np.random.Generator) -> None:
        self.in_dim = in_dim
        self.out_dim = out_dim
        std = np.sqrt(2.0 / in_dim)
        self.weight = Parameter(f"{name}.weight", Tensor(rng.normal(0.0, std, size=(in_dim, out_dim))))
        self.bias = Parameter(f"{name}.bias", Tensor(np.zeros(out_dim)))

    def parameters(self) -> List[Parameter]:
        return [self.weight, self.bias]

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim < 1 or x.shape[-1] != self.in_dim:
            raise ShapeError("dense", x.shape, (self.in_dim, self.out_dim))
        lead = x.shape[:-1]
        flat = reshape(x, (-1, self.in_dim)) if x.ndim != 2 else x
        y = flat @ self.weight.value + self.bias.value
        return reshape(y, lead + (self.out_dim,)) if x.ndim != 2 else y


class MLP:
    """`depth` dense layers of `width` units, each followed by the activation."""

    def __init__(
        self,
        name: str,
        in_dim: int,
        width: int,
        depth: int,
        activation: str,
        rng: np.random.Generator,
    ) -> None:
        self.activation = ACTIVATIONS[activation]
        self.layers: List[Dense] = []
        dim = in_dim
        for i in range(depth):
            self.layers.append(Dense(f"{name}.{i}", dim, width, rng))
            dim = width
        self.out_dim = dim

    def parameters(self) -> List[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = self.activation(layer(x))
        return x


class Head:
    """MLP trunk followed by a linear output layer."""

    def __init__(
        self,
        name: str,
        in_dim: int,
        width: int,
        depth: int,
        out_dim: int,
        activation: str,
        rng: np.random.Generator,
    ) -> None:
        self.trunk = MLP(f"{name}.trunk", in_dim, width, depth, activation, rng)
        self.out = Dense(f"{name}.out", self.trunk.out_dim, out_dim, rng)

    def parameters(self) -> List[Parameter]:
        return self.trunk.parameters() + self.out.parameters()

    def __call__(self, x: Tensor) -> Tensor:
        return self.out(self.trunk(x))
