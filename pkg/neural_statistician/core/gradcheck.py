# neural_statistician/core/gradcheck.py
"""
Central-difference gradient checks.

The error metric everywhere is |analytic - numeric| / max(1, |analytic|).
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional

import numpy as np

from neural_statistician.core.optim import Parameter
from neural_statistician.core.tensor import Tensor, TensorLike, backward


def _relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1.0, abs(analytic))


def grad_check(
    f: Callable[[Tensor], Tensor],
    point: TensorLike,
    h: float = 1e-5,
) -> float:
    """
    Compare backward() against central differences of a scalar-valued graph builder.

    Args:
        f: builds a scalar Tensor from its argument.
        point: where to evaluate.
        h: finite-difference step.

    Returns:
        Max relative error over all coordinates of `point`.
    """
    base = np.array(Tensor(point).data, dtype=np.float64)
    x = Tensor(base.copy(), requires_grad=True)
    backward(f(x))
    analytic = x.grad if x.grad is not None else np.zeros_like(base)

    worst = 0.0
    flat = base.reshape(-1)
    for i in range(flat.size):
        plus, minus = flat.copy(), flat.copy()
        plus[i] += h
        minus[i] -= h
        f_plus = f(Tensor(plus.reshape(base.shape))).item()
        f_minus = f(Tensor(minus.reshape(base.shape))).item()
        numeric = (f_plus - f_minus) / (2.0 * h)
        worst = max(worst, _relative_error(float(analytic.reshape(-1)[i]), numeric))
    return worst


def parameter_grad_check(
    loss_fn: Callable[[], Tensor],
    parameters: Iterable[Parameter],
    h: float = 1e-5,
    max_coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """
    Gradient check of a closure over model parameters.

    `loss_fn` must be deterministic (freeze its noise). With `max_coords`, only
    that many randomly chosen coordinates per parameter are perturbed.
    """
    params = list(parameters)
    for p in params:
        p.value.grad = None
    backward(loss_fn())
    analytic = {id(p): (p.grad if p.grad is not None else np.zeros(p.shape)) for p in params}

    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for p in params:
        original = p.value.data.copy()
        coords = np.arange(original.size)
        if max_coords is not None and coords.size > max_coords:
            coords = rng.choice(coords, size=max_coords, replace=False)
        for i in coords:
            values = []
            for delta in (h, -h):
                bumped = original.copy().reshape(-1)
                bumped[i] += delta
                p.value.data = bumped.reshape(original.shape)
                values.append(loss_fn().item())
            p.value.data = original
            numeric = (values[0] - values[1]) / (2.0 * h)
            worst = max(worst, _relative_error(float(analytic[id(p)].reshape(-1)[i]), numeric))
    return worst
