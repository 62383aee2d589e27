# neural_statistician/services/synthetic.py
"""
Synthetic 1-D set corpus.

Each set draws a family uniformly from {exponential, gaussian, uniform,
laplacian}, a mean m ~ U[-1, 1] and a variance v ~ U[0.5, 2], then
`samples_per_set` i.i.d. points from that family parameterized to have
exactly mean m and variance v.

Every set has its own generator seeded by (seed, set index), so the output
depends only on the arguments and serial and threaded generation agree.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from typing import List, Tuple

import numpy as np

from neural_statistician.services.corpus import CorpusError, DatasetBatch, SetLabel

logger = logging.getLogger(__name__)

MEAN_RANGE = (-1.0, 1.0)
VARIANCE_RANGE = (0.5, 2.0)


class SyntheticFamily(str, Enum):
    EXPONENTIAL = "exponential"
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"
    LAPLACIAN = "laplacian"


FAMILIES: List[SyntheticFamily] = list(SyntheticFamily)


def family_moments(family: SyntheticFamily, m: float, v: float) -> Tuple[float, float]:
    """Analytic mean and variance of the parameterization used for (m, v)."""
    family = SyntheticFamily(family)
    sd = math.sqrt(v)
    if family is SyntheticFamily.EXPONENTIAL:
        # shift + Exp(scale): mean shift + scale, variance scale^2
        shift, scale = m - sd, sd
        return shift + scale, scale**2
    if family is SyntheticFamily.UNIFORM:
        width = math.sqrt(12.0 * v)
        low, high = m - width / 2.0, m + width / 2.0
        return (low + high) / 2.0, (high - low) ** 2 / 12.0
    if family is SyntheticFamily.LAPLACIAN:
        loc, scale = m, math.sqrt(v / 2.0)
        return loc, 2.0 * scale**2
    return m, sd**2


def sample_family(
    family: SyntheticFamily, m: float, v: float, size: int, rng: np.random.Generator
) -> np.ndarray:
    family = SyntheticFamily(family)
    sd = math.sqrt(v)
    if family is SyntheticFamily.EXPONENTIAL:
        return (m - sd) + rng.exponential(scale=sd, size=size)
    if family is SyntheticFamily.UNIFORM:
        half = math.sqrt(12.0 * v) / 2.0
        return rng.uniform(m - half, m + half, size=size)
    if family is SyntheticFamily.LAPLACIAN:
        return rng.laplace(loc=m, scale=math.sqrt(v / 2.0), size=size)
    return rng.normal(loc=m, scale=sd, size=size)


def _generate_set(seed: int, index: int, samples_per_set: int) -> Tuple[np.ndarray, SetLabel]:
    rng = np.random.default_rng([seed, index])
    family = FAMILIES[int(rng.integers(len(FAMILIES)))]
    m = float(rng.uniform(*MEAN_RANGE))
    v = float(rng.uniform(*VARIANCE_RANGE))
    points = sample_family(family, m, v, samples_per_set, rng)
    return points, SetLabel(family=family.value, mean=m, variance=v)


def gen_synthetic_1d(
    n_sets: int = 10000,
    samples_per_set: int = 200,
    seed: int = 0,
    workers: int = 1,
) -> DatasetBatch:
    """
    Generate a labelled corpus of 1-D sets.

    Args:
        n_sets: number of sets.
        samples_per_set: points per set.
        seed: non-negative base seed.
        workers: threads used for generation; output does not depend on it.

    Raises:
        CorpusError: on non-positive counts or a negative seed.
    """
    if n_sets < 1 or samples_per_set < 1:
        raise CorpusError(
            f"n_sets and samples_per_set must be >= 1, got {n_sets} and {samples_per_set}"
        )
    if seed < 0:
        raise CorpusError(f"seed must be non-negative, got {seed}")

    def one(index: int) -> Tuple[np.ndarray, SetLabel]:
        return _generate_set(seed, index, samples_per_set)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(one, range(n_sets)))
    else:
        results = [one(i) for i in range(n_sets)]

    values = np.stack([points for points, _ in results])[..., None]
    labels = [label for _, label in results]
    logger.info("Generated %d synthetic sets of %d samples (seed %d)", n_sets, samples_per_set, seed)
    return DatasetBatch(values=values, labels=labels)
