# neural_statistician/models/distributions.py
"""
Diagonal-Gaussian primitives.

All functions are pure and differentiable; densities and divergences reduce
over the last axis, leaving one value per row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from neural_statistician.core.tensor import (
    ShapeError,
    Tensor,
    TensorLike,
    as_tensor,
    clip,
    exp,
    log,
    neg,
    slice_,
    square,
    sum_,
)

LOG_2PI = math.log(2.0 * math.pi)
LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 10.0
PROB_EPS = 1e-7


@dataclass(frozen=True)
class GaussianParams:
    """Mean and log-variance of a diagonal Gaussian; the last axis is the dimension."""

    mean: Tensor
    log_var: Tensor

    def __post_init__(self) -> None:
        if self.mean.shape != self.log_var.shape:
            raise ShapeError("GaussianParams", self.mean.shape, self.log_var.shape)

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.mean.shape

    @property
    def variance(self) -> np.ndarray:
        return np.exp(self.log_var.data)

    @property
    def std(self) -> np.ndarray:
        return np.exp(0.5 * self.log_var.data)

    def detach(self) -> "GaussianParams":
        return GaussianParams(self.mean.detach(), self.log_var.detach())

    def row(self, i: int) -> "GaussianParams":
        """Constant (non-differentiable) params of the i-th leading row."""
        return GaussianParams(Tensor(self.mean.data[i]), Tensor(self.log_var.data[i]))


@dataclass(frozen=True)
class StandardNormalPrior:
    """Zero-mean, unit-variance prior, e.g. p(c)."""

    dim: int

    def params(self, lead_shape: Tuple[int, ...] = ()) -> GaussianParams:
        zeros = np.zeros(tuple(lead_shape) + (self.dim,))
        return GaussianParams(Tensor(zeros), Tensor(zeros.copy()))


def clamp_log_var(log_var: Tensor) -> Tensor:
    """
    Clamp to [LOG_VAR_MIN, LOG_VAR_MAX] with a straight-through gradient, so a
    network output that leaves the range is still pulled back by the loss.
    """
    return clip(log_var, LOG_VAR_MIN, LOG_VAR_MAX, straight_through=True)


def split_gaussian(raw: Tensor, dim: int) -> GaussianParams:
    """Split a (..., 2*dim) network output into a clamped GaussianParams."""
    if raw.shape[-1] != 2 * dim:
        raise ShapeError("split_gaussian", raw.shape, detail=f"expected last axis {2 * dim}")
    mean = slice_(raw, -1, 0, dim)
    log_var = clamp_log_var(slice_(raw, -1, dim, 2 * dim))
    return GaussianParams(mean, log_var)


def _check_same(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)


def reparam_sample(params: GaussianParams, noise: TensorLike) -> Tensor:
    """mean + exp(0.5 * log_var) * noise."""
    eps = as_tensor(noise)
    _check_same("reparam_sample", params.mean, eps)
    return params.mean + exp(params.log_var * 0.5) * eps


def log_pdf(x: TensorLike, params: GaussianParams) -> Tensor:
    x = as_tensor(x)
    _check_same("log_pdf", x, params.mean)
    quad = square(x - params.mean) * exp(neg(params.log_var))
    terms = (params.log_var + quad) * -0.5 - 0.5 * LOG_2PI
    return sum_(terms, axis=-1)


def kl_diag(q: GaussianParams, p: GaussianParams) -> Tensor:
    """Closed-form KL(q || p) between diagonal Gaussians."""
    _check_same("kl_diag", q.mean, p.mean)
    ratio = (exp(q.log_var) + square(q.mean - p.mean)) * exp(neg(p.log_var))
    terms = (p.log_var - q.log_var + ratio - 1.0) * 0.5
    return sum_(terms, axis=-1)


def kl_to_standard(q: GaussianParams) -> Tensor:
    """KL(q || N(0, I))."""
    terms = (exp(q.log_var) + square(q.mean) - q.log_var - 1.0) * 0.5
    return sum_(terms, axis=-1)


def bernoulli_log_prob(x: TensorLike, probs: Tensor) -> Tensor:
    x = as_tensor(x)
    _check_same("bernoulli_log_prob", x, probs)
    p = clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    terms = x * log(p) + (1.0 - x) * log(1.0 - p)
    return sum_(terms, axis=-1)
