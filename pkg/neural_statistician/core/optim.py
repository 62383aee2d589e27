# neural_statistician/core/optim.py
"""
Trainable parameters and the Adam optimizer.

Each Parameter carries its own Adam moment estimates and step counter.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, List, Optional

import numpy as np

from neural_statistician.core.errors import StatisticianError
from neural_statistician.core.tensor import Tensor


class OptimizerError(StatisticianError):
    """Raised for invalid optimizer settings or missing gradients."""


@dataclass(eq=False)
class Parameter:
    name: str
    value: Tensor
    adam_m: Tensor = field(init=False)
    adam_v: Tensor = field(init=False)
    step_count: int = 0

    def __post_init__(self) -> None:
        self.value.requires_grad = True
        self.adam_m = Tensor(np.zeros_like(self.value.data))
        self.adam_v = Tensor(np.zeros_like(self.value.data))

    @property
    def shape(self):
        return self.value.shape

    @property
    def grad(self) -> Optional[np.ndarray]:
        return self.value.grad

    def zero_grad(self) -> None:
        self.value.grad = np.zeros_like(self.value.data)

    def assign(self, data: np.ndarray) -> None:
        data = np.asarray(data, dtype=np.float64)
        if data.shape != self.value.shape:
            raise OptimizerError(
                f"{self.name}: cannot assign shape {data.shape} to {self.value.shape}"
            )
        self.value.data = data.copy()


def adam_step(
    param: Parameter,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Apply one bias-corrected Adam update in place. The gradient is left as is."""
    g = param.grad
    if g is None:
        raise OptimizerError(f"{param.name}: no gradient to apply")

    param.step_count += 1
    t = param.step_count
    m = beta1 * param.adam_m.data + (1.0 - beta1) * g
    v = beta2 * param.adam_v.data + (1.0 - beta2) * (g * g)
    param.adam_m.data = m
    param.adam_v.data = v

    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    param.value.data = param.value.data - lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """Adam over a fixed list of parameters."""

    def __init__(
        self,
        parameters: Iterable[Parameter],
        lr: float = 1e-3,
        betas: tuple = (0.9, 0.999),
        eps: float = 1e-8,
    ) -> None:
        if lr < 0.0:
            raise OptimizerError(f"Invalid learning rate: {lr}")
        if eps < 0.0:
            raise OptimizerError(f"Invalid epsilon value: {eps}")
        for i, beta in enumerate(betas):
            if not 0.0 <= beta < 1.0:
                raise OptimizerError(f"Invalid beta parameter at index {i}: {beta}")

        self.parameters: List[Parameter] = list(parameters)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps

    def zero_grad(self) -> None:
        for p in self.parameters:
            p.zero_grad()

    def step(self) -> None:
        for p in self.parameters:
            adam_step(p, self.lr, self.beta1, self.beta2, self.eps)
