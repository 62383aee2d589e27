# tests/test_algorithms.py

from __future__ import annotations

from itertools import combinations

import numpy as np
import pytest

from neural_statistician.core.tensor import Tensor
from neural_statistician.models.distributions import GaussianParams
from neural_statistician.models.schemas import ModelConfig, TrainConfig
from neural_statistician.models.statistician import NeuralStatistician
from neural_statistician.services.algorithms import (
    AlgorithmError,
    ContextPosterior,
    InsufficientCorpusError,
    classify_by_context,
    conditional_sample,
    encode_sets,
    few_shot_classify,
    fewshot_episode_eval,
    representative_subsample,
    sample_dataset,
    subset_kl,
)
from neural_statistician.services.corpus import DatasetBatch, SetLabel
from neural_statistician.services.synthetic import gen_synthetic_1d
from neural_statistician.services.training import fit


def gauss(mean, log_var) -> GaussianParams:
    return GaussianParams(Tensor(np.asarray(mean, dtype=float)), Tensor(np.asarray(log_var, dtype=float)))


def _params(model):
    return {name: p.value.data.copy() for name, p in model.named_parameters().items()}


@pytest.fixture
def points() -> np.ndarray:
    return np.random.default_rng(3).normal(size=(6, 2))


# ----------------------------------------------------------------------
# Sampling
# ----------------------------------------------------------------------


def test_sample_dataset_shape_and_mean_path(tiny_model):
    x = sample_dataset(tiny_model, 7, np.random.default_rng(0))
    assert x.shape == (7, 2)
    a = sample_dataset(tiny_model, 3)
    b = sample_dataset(tiny_model, 3)
    np.testing.assert_array_equal(a, b)
    # every row shares c and the mean path, so all rows agree
    np.testing.assert_array_equal(a[0], a[2])


def test_sample_dataset_is_seeded(tiny_model):
    a = sample_dataset(tiny_model, 4, np.random.default_rng(8))
    b = sample_dataset(tiny_model, 4, np.random.default_rng(8))
    np.testing.assert_array_equal(a, b)


def test_sample_dataset_rejects_empty(tiny_model):
    with pytest.raises(AlgorithmError):
        sample_dataset(tiny_model, 0)


def test_bernoulli_samples(tiny_config):
    model = NeuralStatistician(tiny_config.model_copy(update={"likelihood": "bernoulli"}))
    probs = sample_dataset(model, 5)
    assert ((probs > 0) & (probs < 1)).all()
    bits = sample_dataset(model, 50, np.random.default_rng(0))
    assert set(np.unique(bits)) <= {0.0, 1.0}


def test_conditional_sample(tiny_model, points):
    assert conditional_sample(tiny_model, points, 0).shape == (0, 2)
    x = conditional_sample(tiny_model, points, 4, np.random.default_rng(1))
    assert x.shape == (4, 2)
    y = conditional_sample(tiny_model, points[::-1], 4, np.random.default_rng(1))
    np.testing.assert_allclose(x, y, atol=1e-9)
    posterior = ContextPosterior.of(tiny_model, points)
    assert posterior.source_size == 6
    np.testing.assert_array_equal(conditional_sample(tiny_model, posterior, 4, np.random.default_rng(1)), x)


def test_conditional_sample_rejects_bad_input(tiny_model):
    with pytest.raises(AlgorithmError):
        conditional_sample(tiny_model, np.zeros((0, 2)), 3)
    with pytest.raises(AlgorithmError):
        conditional_sample(tiny_model, np.zeros((3, 5)), 3)
    with pytest.raises(AlgorithmError):
        conditional_sample(tiny_model, np.zeros((3, 2)), -1)


def test_context_posterior_of_single_point(tiny_model):
    posterior = ContextPosterior.of(tiny_model, np.array([0.5, -0.5]))
    assert posterior.source_size == 1
    assert posterior.mean.shape == (2,)


def test_encode_sets_matches_single_batch(tiny_model):
    values = np.random.default_rng(0).normal(size=(7, 3, 2))
    chunked = encode_sets(tiny_model, values, batch_size=3)
    whole = tiny_model.encode_context(values)
    np.testing.assert_allclose(chunked.mean.data, whole.mean.data, atol=1e-12)
    np.testing.assert_allclose(chunked.log_var.data, whole.log_var.data, atol=1e-12)


# ----------------------------------------------------------------------
# Representative subsampling
# ----------------------------------------------------------------------


def test_one_removal_matches_exhaustive(tiny_model, points):
    result = representative_subsample(tiny_model, points, 5)
    kls = [subset_kl(tiny_model, points, [i for i in range(6) if i != j]) for j in range(6)]
    removed = int(np.argmin(kls))
    assert result.indices == [i for i in range(6) if i != removed]
    assert result.kl_path == [pytest.approx(kls[removed], abs=1e-12)]


def test_greedy_never_beats_exhaustive(tiny_model, points):
    result = representative_subsample(tiny_model, points, 3)
    best = min(subset_kl(tiny_model, points, list(s)) for s in combinations(range(6), 3))
    assert len(result.indices) == 3
    assert result.kl_path[-1] == pytest.approx(subset_kl(tiny_model, points, result.indices), abs=1e-12)
    assert result.kl_path[-1] >= best - 1e-12
    assert len(result.kl_path) == 3


@pytest.fixture(scope="module")
def trained_1d_model():
    config = ModelConfig(n_features=1, c_dim=3, z_dim=4, hidden_width=16, hidden_depth=2, max_set_size=20)
    model = NeuralStatistician(config, seed=0)
    corpus = gen_synthetic_1d(n_sets=64, samples_per_set=20, seed=0)
    fit(model, corpus, TrainConfig(epochs=5, batch_size=16, log_timing=False))
    return model


def test_greedy_close_to_exhaustive_on_trained_model(trained_1d_model):
    heldout = gen_synthetic_1d(n_sets=5, samples_per_set=6, seed=11)
    within = 0
    for points in heldout.values:
        result = representative_subsample(trained_1d_model, points, 3)
        best = min(subset_kl(trained_1d_model, points, list(s)) for s in combinations(range(6), 3))
        assert result.kl_path[-1] >= best - 1e-12
        within += int(result.kl_path[-1] <= 1.05 * best + 1e-12)
    assert within >= 4


def test_survivors_in_original_order(tiny_model, points):
    result = representative_subsample(tiny_model, points, 2)
    assert result.indices == sorted(result.indices)
    np.testing.assert_array_equal(result.points, points[result.indices])


def test_duplicate_points_tie_break(tiny_model):
    pts = np.array([[0.3, 0.3], [0.3, 0.3], [0.3, 0.3], [0.5, 0.1]])
    assert subset_kl(tiny_model, pts, [1, 2, 3]) == subset_kl(tiny_model, pts, [0, 2, 3])
    assert subset_kl(tiny_model, pts, [1, 2, 3]) < subset_kl(tiny_model, pts, [0, 1, 2])
    result = representative_subsample(tiny_model, pts, 3)
    # the three copies tie; the smallest index goes
    assert result.indices == [1, 2, 3]


@pytest.mark.parametrize("k", [0, 6, 7])
def test_subsample_size_bounds(tiny_model, points, k):
    with pytest.raises(AlgorithmError):
        representative_subsample(tiny_model, points, k)


def test_subset_kl_of_full_set_is_zero(tiny_model, points):
    assert subset_kl(tiny_model, points, range(6)) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(AlgorithmError):
        subset_kl(tiny_model, points, [])


# ----------------------------------------------------------------------
# Few-shot classification
# ----------------------------------------------------------------------


def test_classify_by_context_closed_form():
    prediction, kls = classify_by_context([gauss([0.0], [0.0]), gauss([3.0], [0.0])], gauss([2.5], [0.0]))
    assert prediction == 1
    np.testing.assert_allclose(kls, [3.125, 0.125])


def test_classify_ties_go_to_first_class():
    same = gauss([1.0, 1.0], [0.0, 0.0])
    prediction, _ = classify_by_context([same, same, same], gauss([0.0, 0.0], [0.0, 0.0]))
    assert prediction == 0


def test_classify_needs_two_classes():
    with pytest.raises(AlgorithmError):
        classify_by_context([gauss([0.0], [0.0])], gauss([0.0], [0.0]))


def test_query_equal_to_a_support_set(tiny_model):
    rng = np.random.default_rng(0)
    sets = [rng.normal(loc=3 * i, size=(4, 2)) for i in range(3)]
    assert few_shot_classify(tiny_model, sets, sets[2]) == 2


def test_few_shot_invariances(tiny_model):
    rng = np.random.default_rng(1)
    sets = [rng.normal(loc=2 * i, size=(5, 2)) for i in range(3)]
    query = rng.normal(loc=2.0, size=2)
    base = few_shot_classify(tiny_model, sets, query)
    shuffled = [s[rng.permutation(5)] for s in sets]
    assert few_shot_classify(tiny_model, shuffled, query) == base
    doubled = [np.concatenate([s, s]) for s in sets]
    assert few_shot_classify(tiny_model, doubled, query) == base


def test_few_shot_rejects_empty_support(tiny_model):
    with pytest.raises(AlgorithmError):
        few_shot_classify(tiny_model, [np.zeros((2, 2)), np.zeros((0, 2))], np.zeros(2))


@pytest.fixture
def family_corpus():
    return gen_synthetic_1d(n_sets=40, samples_per_set=10, seed=2)


@pytest.fixture
def model_1d(small_1d_config):
    return NeuralStatistician(small_1d_config.model_copy(update={"hidden_width": 8}), seed=0)


def test_episodes_are_reproducible(model_1d, family_corpus):
    before = _params(model_1d)
    a = fewshot_episode_eval(model_1d, family_corpus, 1, 3, n_episodes=6, rng=np.random.default_rng(5))
    b = fewshot_episode_eval(
        model_1d, family_corpus, 1, 3, n_episodes=6, rng=np.random.default_rng(5), workers=3
    )
    assert a.accuracies == b.accuracies
    assert len(a.accuracies) == 6
    assert all(0.0 <= acc <= 1.0 for acc in a.accuracies)
    assert a.mean == pytest.approx(np.mean(a.accuracies))
    assert a.stderr >= 0.0
    assert a.to_dict()["k_way"] == 3
    for name, value in _params(model_1d).items():
        np.testing.assert_array_equal(value, before[name])


def test_queries_per_class(model_1d, family_corpus):
    report = fewshot_episode_eval(model_1d, family_corpus, 2, 2, n_episodes=3, queries_per_class=1)
    # two queries per episode
    assert set(report.accuracies) <= {0.0, 0.5, 1.0}
    with pytest.raises(AlgorithmError):
        fewshot_episode_eval(model_1d, family_corpus, 1, 2, queries_per_class=0)


def _labelled(values, k_way):
    labels = [SetLabel(class_id=i % k_way) for i in range(len(values))]
    return DatasetBatch(values, labels)


def test_identical_classes_score_exactly_chance(model_1d):
    values = np.repeat(np.random.default_rng(0).normal(size=(1, 5, 1)), 12, axis=0)
    report = fewshot_episode_eval(model_1d, _labelled(values, 4), 1, 4, n_episodes=10)
    # every KL ties, so every query goes to the first class
    assert report.accuracies == [0.25] * 10


def test_same_distribution_classes_score_near_chance(model_1d):
    values = np.random.default_rng(4).normal(size=(160, 5, 1))
    report = fewshot_episode_eval(model_1d, _labelled(values, 4), 1, 4, n_episodes=100, rng=np.random.default_rng(0))
    assert report.mean == pytest.approx(0.25, abs=0.1)


def test_insufficient_corpus(model_1d, family_corpus):
    with pytest.raises(InsufficientCorpusError):
        fewshot_episode_eval(model_1d, family_corpus, 1, 5)
    with pytest.raises(InsufficientCorpusError):
        fewshot_episode_eval(model_1d, family_corpus, 40, 2)


def test_episode_arguments_checked(model_1d, family_corpus):
    with pytest.raises(AlgorithmError):
        fewshot_episode_eval(model_1d, family_corpus, 1, 1)
    with pytest.raises(AlgorithmError):
        fewshot_episode_eval(model_1d, family_corpus, 0, 2)
