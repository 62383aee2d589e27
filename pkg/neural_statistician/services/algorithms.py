# neural_statistician/services/algorithms.py
"""
Inference-time procedures on a trained NeuralStatistician.

- sample_dataset:           c ~ p(c), then z_L..z_1 and x through the generative nets.
- conditional_sample:       c fixed to the posterior mean of q(c | D_in).
- representative_subsample: greedy backward elimination minimizing KL(q(c|D) || q(c|S)).
- few_shot_classify:        argmin_i KL(q(c|D_i) || q(c|query)).
- fewshot_episode_eval:     repeated K-way k-shot episodes over a labelled corpus.

None of these touch model parameters; all run without recording a graph.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from neural_statistician.core.errors import StatisticianError
from neural_statistician.core.tensor import Tensor, no_grad
from neural_statistician.models.distributions import GaussianParams, kl_diag, reparam_sample
from neural_statistician.models.statistician import NeuralStatistician
from neural_statistician.services.corpus import DatasetBatch

logger = logging.getLogger(__name__)

# relative tolerance under which two greedy candidates count as tied
TIE_TOLERANCE = 1e-9


class AlgorithmError(StatisticianError):
    """Raised for invalid arguments to the inference-time procedures."""


class InsufficientCorpusError(AlgorithmError):
    """Raised when a corpus cannot supply the requested few-shot episodes."""


@dataclass
class ContextPosterior:
    params: GaussianParams  # over c, shape (c_dim,)
    source_size: int

    @classmethod
    def of(cls, model: NeuralStatistician, points: np.ndarray) -> "ContextPosterior":
        points = _as_points(model, points)
        if points.shape[0] == 0:
            raise AlgorithmError("cannot compute a context posterior of an empty set")
        params = model.context_posterior(points)
        if params.dim != model.config.c_dim:
            raise AlgorithmError(f"posterior has {params.dim} units, model has c_dim={model.config.c_dim}")
        return cls(params=params, source_size=points.shape[0])

    @property
    def mean(self) -> np.ndarray:
        return self.params.mean.data


@dataclass
class SubsampleResult:
    indices: List[int]
    points: np.ndarray
    kl_path: List[float] = field(default_factory=list)  # KL selected at each removal


@dataclass
class FewShotReport:
    accuracies: List[float]
    mean: float
    stderr: float
    k_shot: int
    k_way: int

    def to_dict(self) -> Dict[str, object]:
        return {
            "accuracies": self.accuracies,
            "mean": self.mean,
            "stderr": self.stderr,
            "k_shot": self.k_shot,
            "k_way": self.k_way,
        }


def _as_points(model: NeuralStatistician, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points.reshape(1, -1)
    if points.ndim != 2 or points.shape[1] != model.config.n_features:
        raise AlgorithmError(
            f"expected points of shape (m, {model.config.n_features}), got {points.shape}"
        )
    return points


def encode_sets(model: NeuralStatistician, values: np.ndarray, batch_size: int = 256) -> GaussianParams:
    """q(c | D) for every set of a (n_sets, sample_size, n_features) array, in chunks."""
    values = np.asarray(values, dtype=np.float64)
    means, log_vars = [], []
    for start in range(0, values.shape[0], batch_size):
        params = model.context_posterior(values[start : start + batch_size])
        means.append(params.mean.data)
        log_vars.append(params.log_var.data)
    return GaussianParams(Tensor(np.concatenate(means)), Tensor(np.concatenate(log_vars)))


# ----------------------------------------------------------------------
# Sampling
# ----------------------------------------------------------------------


def _generate(
    model: NeuralStatistician, c: np.ndarray, k: int, rng: Optional[np.random.Generator]
) -> np.ndarray:
    """k datapoints given one context vector; rng None follows the mean path."""
    config = model.config
    if k == 0:
        return np.zeros((0, config.n_features))

    def noise(shape: Tuple[int, ...]) -> np.ndarray:
        return rng.standard_normal(shape) if rng is not None else np.zeros(shape)

    with no_grad():
        c_k = Tensor(np.broadcast_to(c, (k, config.c_dim)))
        zs: List[Optional[Tensor]] = [None] * config.n_stochastic_layers
        z_next: Optional[Tensor] = None
        for layer in range(config.n_stochastic_layers, 0, -1):
            p = model.decode_latent_params(z_next, c_k, layer)
            z_next = reparam_sample(p, noise(p.shape))
            zs[layer - 1] = z_next

        observation = model.decode_observation(zs, c_k)
        if isinstance(observation, GaussianParams):
            return reparam_sample(observation, noise(observation.shape)).numpy()
        probs = observation.numpy()
        if rng is None:
            return probs
        return (rng.random(probs.shape) < probs).astype(np.float64)


def sample_dataset(
    model: NeuralStatistician, k: int, rng: Optional[np.random.Generator] = None
) -> np.ndarray:
    """Sample a dataset of size k: c ~ p(c), then the generative chain per datapoint."""
    if k < 1:
        raise AlgorithmError(f"k must be >= 1, got {k}")
    c_dim = model.config.c_dim
    c = rng.standard_normal(c_dim) if rng is not None else np.zeros(c_dim)
    return _generate(model, c, k, rng)


def conditional_sample(
    model: NeuralStatistician,
    conditioning: Union[np.ndarray, ContextPosterior],
    k: int,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """
    Sample k datapoints with c set to the mean of q(c | conditioning). The
    conditioning set may be given as points or as its precomputed posterior.
    """
    if k < 0:
        raise AlgorithmError(f"k must be >= 0, got {k}")
    if isinstance(conditioning, ContextPosterior):
        posterior = conditioning
    else:
        posterior = ContextPosterior.of(model, conditioning)
    return _generate(model, posterior.mean, k, rng)


# ----------------------------------------------------------------------
# Summaries
# ----------------------------------------------------------------------


def _kl_to_rows(reference: GaussianParams, rows: GaussianParams) -> np.ndarray:
    n = rows.shape[0]
    ref = GaussianParams(
        Tensor(np.broadcast_to(reference.mean.data, rows.shape)),
        Tensor(np.broadcast_to(reference.log_var.data, rows.shape)),
    )
    with no_grad():
        return kl_diag(ref, rows).numpy().reshape(n)


def subset_kl(model: NeuralStatistician, points: np.ndarray, indices: Sequence[int]) -> float:
    """KL(q(c | D) || q(c | D[indices]))."""
    points = _as_points(model, points)
    idx = list(indices)
    if not idx:
        raise AlgorithmError("subset must be non-empty")
    full = model.context_posterior(points)
    sub = model.context_posterior(points[idx])
    with no_grad():
        return kl_diag(full, sub).item()


def representative_subsample(model: NeuralStatistician, points: np.ndarray, k: int) -> SubsampleResult:
    """
    Greedy backward elimination: starting from all m points, repeatedly drop
    the point whose removal leaves the subset with the smallest
    KL(q(c | D) || q(c | S)) until k points remain.

    The reference is always the full set. Ties go to the smallest original
    index. Survivors are returned in original order.
    """
    points = _as_points(model, points)
    m = points.shape[0]
    if not 1 <= k < m:
        raise AlgorithmError(f"k must satisfy 1 <= k < m = {m}, got {k}")

    reference = model.context_posterior(points)
    remaining = list(range(m))
    kl_path: List[float] = []
    while len(remaining) > k:
        # one candidate subset per removable point, scored in one batch
        candidates = np.stack(
            [points[remaining[:j] + remaining[j + 1 :]] for j in range(len(remaining))]
        )
        kls = _kl_to_rows(reference, model.context_posterior(candidates))
        best = float(kls.min())
        pos = int(np.flatnonzero(kls <= best + TIE_TOLERANCE * max(1.0, abs(best)))[0])
        kl_path.append(float(kls[pos]))
        del remaining[pos]

    logger.debug("Selected %d of %d points, final KL %.6g", k, m, kl_path[-1])
    return SubsampleResult(indices=remaining, points=points[remaining], kl_path=kl_path)


# ----------------------------------------------------------------------
# Few-shot classification
# ----------------------------------------------------------------------


def classify_by_context(
    class_posteriors: Sequence[GaussianParams], query: GaussianParams
) -> Tuple[int, np.ndarray]:
    """argmin_i KL(N_i || N_x); np.argmin keeps the smallest index on ties."""
    if len(class_posteriors) < 2:
        raise AlgorithmError(f"need at least 2 classes, got {len(class_posteriors)}")
    with no_grad():
        kls = np.array([kl_diag(p, query).item() for p in class_posteriors])
    return int(np.argmin(kls)), kls


def few_shot_classify(
    model: NeuralStatistician, class_sets: Sequence[np.ndarray], x: np.ndarray
) -> int:
    """
    Predict the class of a query point (shape (n,)) or query set (shape (m, n))
    from K labelled support sets.
    """
    if len(class_sets) < 2:
        raise AlgorithmError(f"need at least 2 class sets, got {len(class_sets)}")
    posteriors = []
    for i, support in enumerate(class_sets):
        support = _as_points(model, support)
        if support.shape[0] == 0:
            raise AlgorithmError(f"class set {i} is empty")
        posteriors.append(model.context_posterior(support))
    query = ContextPosterior.of(model, x).params
    prediction, _ = classify_by_context(posteriors, query)
    return prediction


def _group_by_class(corpus: DatasetBatch) -> Dict[str, List[int]]:
    groups: Dict[str, List[int]] = defaultdict(list)
    for i, key in enumerate(corpus.class_keys()):
        if key is not None:
            groups[key].append(i)
    return dict(groups)


def fewshot_episode_eval(
    model: NeuralStatistician,
    corpus: DatasetBatch,
    k_shot: int,
    k_way: int,
    n_episodes: int = 100,
    rng: Optional[np.random.Generator] = None,
    workers: int = 1,
    queries_per_class: Optional[int] = None,
) -> FewShotReport:
    """
    Repeated K-way k-shot evaluation. Each set in `corpus` is one example of
    its class; an episode picks k_way classes, pools k_shot example sets per
    class into one support set, and classifies every other example of those
    classes (or `queries_per_class` of them) as a query set.

    Raises:
        InsufficientCorpusError: fewer than k_way classes with k_shot + 1 examples.
    """
    if k_way < 2 or k_shot < 1 or n_episodes < 1:
        raise AlgorithmError(
            f"need k_way >= 2, k_shot >= 1, n_episodes >= 1; got {k_way}, {k_shot}, {n_episodes}"
        )
    if queries_per_class is not None and queries_per_class < 1:
        raise AlgorithmError(f"queries_per_class must be >= 1, got {queries_per_class}")
    groups = _group_by_class(corpus)
    eligible = sorted(key for key, idx in groups.items() if len(idx) >= k_shot + 1)
    if len(eligible) < k_way:
        raise InsufficientCorpusError(
            f"{len(eligible)} classes have at least {k_shot + 1} examples, {k_way} required"
        )

    queries = encode_sets(model, corpus.values)
    rng = rng if rng is not None else np.random.default_rng(0)
    seeds = rng.integers(0, 2**63 - 1, size=n_episodes)
    n_features = corpus.n_features

    def episode(seed: int) -> float:
        erng = np.random.default_rng(seed)
        chosen = erng.choice(len(eligible), size=k_way, replace=False)
        supports: List[GaussianParams] = []
        query_rows: List[Tuple[int, int]] = []
        for label, class_pos in enumerate(chosen):
            members = erng.permutation(groups[eligible[class_pos]])
            support_idx, query_idx = members[:k_shot], members[k_shot:]
            if queries_per_class is not None:
                query_idx = query_idx[:queries_per_class]
            supports.append(model.context_posterior(corpus.values[support_idx].reshape(-1, n_features)))
            query_rows += [(int(i), label) for i in query_idx]

        correct = 0
        for row, label in query_rows:
            prediction, _ = classify_by_context(supports, queries.row(row))
            correct += int(prediction == label)
        return correct / len(query_rows)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            accuracies = list(executor.map(episode, seeds.tolist()))
    else:
        accuracies = [episode(s) for s in seeds.tolist()]

    acc = np.asarray(accuracies)
    stderr = float(acc.std(ddof=1) / math.sqrt(acc.size)) if acc.size > 1 else 0.0
    report = FewShotReport(
        accuracies=[float(a) for a in accuracies],
        mean=float(acc.mean()),
        stderr=stderr,
        k_shot=k_shot,
        k_way=k_way,
    )
    logger.info(
        "%d-way %d-shot over %d episodes: accuracy %.4f +/- %.4f",
        k_way, k_shot, n_episodes, report.mean, report.stderr,
    )
    return report
