# tests/test_training.py

from __future__ import annotations

import csv

import numpy as np
import pytest

from neural_statistician.models.checkpoint import load_checkpoint
from neural_statistician.models.schemas import ModelConfig, TrainConfig
from neural_statistician.models.statistician import NeuralStatistician
from neural_statistician.services.corpus import DatasetBatch
from neural_statistician.services.history import EpochRecord, TrainLog
from neural_statistician.services.synthetic import gen_synthetic_1d
from neural_statistician.services.training import (
    TrainingError,
    evaluate,
    fit,
    periodic_checkpoint_path,
    set_noise,
)

MODEL = ModelConfig(n_features=1, c_dim=2, z_dim=2, hidden_width=8, hidden_depth=1, max_set_size=6)


@pytest.fixture
def corpus() -> DatasetBatch:
    return gen_synthetic_1d(n_sets=5, samples_per_set=6, seed=0)


def _params(model):
    return {name: p.value.data.copy() for name, p in model.named_parameters().items()}


def test_same_seed_same_run(corpus):
    cfg = TrainConfig(epochs=2, batch_size=2, seed=4, log_timing=False)
    a, b = NeuralStatistician(MODEL, seed=1), NeuralStatistician(MODEL, seed=1)
    log_a, log_b = fit(a, corpus, cfg), fit(b, corpus, cfg)
    assert log_a.records == log_b.records
    for name, value in _params(a).items():
        np.testing.assert_array_equal(value, _params(b)[name])


def test_training_changes_parameters(corpus):
    model = NeuralStatistician(MODEL, seed=0)
    before = _params(model)
    fit(model, corpus, TrainConfig(epochs=1, batch_size=5))
    assert any(not np.array_equal(before[n], v) for n, v in _params(model).items())


def test_zero_learning_rate_with_fixed_noise(corpus):
    model = NeuralStatistician(MODEL, seed=0)
    before = _params(model)
    cfg = TrainConfig(epochs=3, batch_size=2, lr=0.0, fixed_noise=True, seed=6)
    train_log = fit(model, corpus, cfg)

    losses = [r.loss for r in train_log.records]
    assert losses[1] == pytest.approx(losses[0], rel=1e-12)
    assert losses[2] == pytest.approx(losses[0], rel=1e-12)
    for name, value in _params(model).items():
        np.testing.assert_array_equal(value, before[name])

    # short last batch is weighted by its size, so the epoch loss is the per-set mean
    assert losses[0] == pytest.approx(-evaluate(model, corpus, seed=6).total.item(), rel=1e-12)


def test_evaluate_single_set_matches_bound(corpus):
    model = NeuralStatistician(MODEL, seed=2)
    one = corpus.subset([3])
    noise, _ = set_noise(MODEL, (9, 3), one.sample_size)
    expected = model.elbo(one.values, noise=noise)
    got = evaluate(model, one, seed=9)
    assert got.total.item() == pytest.approx(expected.total.item(), abs=1e-12)
    assert got.c_d.item() == pytest.approx(expected.c_d.item(), abs=1e-12)


def test_evaluate_ignores_corpus_order(corpus):
    model = NeuralStatistician(MODEL, seed=0)
    base = evaluate(model, corpus, seed=1, batch_size=2).to_dict()
    shuffled = corpus.subset(np.array([4, 2, 0, 3, 1]))
    assert evaluate(model, shuffled, seed=1, batch_size=2).to_dict() == base


def test_evaluate_leaves_parameters(corpus):
    model = NeuralStatistician(MODEL, seed=0)
    before = _params(model)
    terms = evaluate(model, corpus)
    assert terms.c_d.item() >= 0 and terms.l_d.item() >= 0
    for name, value in _params(model).items():
        np.testing.assert_array_equal(value, before[name])


def test_set_noise_is_keyed():
    a, _ = set_noise(MODEL, (1, 2, 3), 4)
    b, _ = set_noise(MODEL, (1, 2, 3), 4)
    c, _ = set_noise(MODEL, (1, 2, 4), 4)
    np.testing.assert_array_equal(a[0].context, b[0].context)
    assert not np.array_equal(a[0].context, c[0].context)
    assert a[0].latents[0].shape == (1, 4, 2)


def test_set_noise_mask_only_with_dropout():
    draws, keep = set_noise(MODEL, (0, 0), 4, n_samples=2, dropout=True)
    assert len(draws) == 2 and keep is None
    config = MODEL.model_copy(update={"sample_dropout_rate": 0.5})
    _, keep = set_noise(config, (0, 0), 4, dropout=True)
    assert keep.shape == (1, 4) and keep.any()


def test_training_with_sample_dropout_and_mc_samples(corpus):
    config = MODEL.model_copy(update={"sample_dropout_rate": 0.4, "append_count_feature": True})
    train_log = fit(NeuralStatistician(config), corpus, TrainConfig(epochs=2, batch_size=3, mc_samples=2))
    assert len(train_log) == 2
    assert all(np.isfinite(r.loss) for r in train_log.records)


def test_loss_goes_down():
    data = gen_synthetic_1d(n_sets=16, samples_per_set=10, seed=1)
    model = NeuralStatistician(MODEL.model_copy(update={"max_set_size": 10}), seed=0)
    train_log = fit(model, data, TrainConfig(epochs=40, batch_size=4, lr=1e-2, fixed_noise=True))
    assert train_log.last().loss < train_log.records[0].loss


def test_checkpoints_and_log(tmp_path, corpus):
    final = tmp_path / "run" / "model.nstm"
    log_path = tmp_path / "run" / "train.csv"
    cfg = TrainConfig(epochs=3, batch_size=2, checkpoint_every=1, checkpoint_path=final, log_path=log_path)
    model = NeuralStatistician(MODEL)
    fit(model, corpus, cfg)

    assert periodic_checkpoint_path(final, 1).exists()
    assert periodic_checkpoint_path(final, 2).exists()
    assert not periodic_checkpoint_path(final, 3).exists()
    restored = load_checkpoint(final)
    for name, value in _params(model).items():
        np.testing.assert_array_equal(restored.named_parameters()[name].value.data, value)

    with log_path.open() as f:
        rows = list(csv.DictReader(f))
    assert [int(r["epoch"]) for r in rows] == [1, 2, 3]
    assert float(rows[0]["loss"]) == pytest.approx(
        -float(rows[0]["r_d"]) + float(rows[0]["c_d"]) + float(rows[0]["l_d"]), abs=1e-9
    )


def test_periodic_checkpoint_name(tmp_path):
    assert periodic_checkpoint_path(tmp_path / "m.nstm", 10).name == "m.epoch0010.nstm"


def test_no_timing_records_zero_seconds(corpus):
    train_log = fit(NeuralStatistician(MODEL), corpus, TrainConfig(epochs=1, log_timing=False))
    assert train_log.last().seconds == 0.0


def test_validation_corpus_is_checked(corpus):
    wrong = DatasetBatch(np.zeros((2, 3, 2)))
    with pytest.raises(TrainingError, match="validation"):
        fit(NeuralStatistician(MODEL), corpus, TrainConfig(epochs=1), validation=wrong)


def test_empty_corpus():
    with pytest.raises(TrainingError, match="empty"):
        fit(NeuralStatistician(MODEL), DatasetBatch(np.zeros((0, 3, 1))), TrainConfig(epochs=1))
    with pytest.raises(TrainingError):
        evaluate(NeuralStatistician(MODEL), DatasetBatch(np.zeros((0, 3, 1))))


def test_non_finite_loss_names_the_batch():
    bad = DatasetBatch(np.full((2, 3, 1), np.nan))
    with pytest.raises(TrainingError) as exc:
        fit(NeuralStatistician(MODEL), bad, TrainConfig(epochs=1, batch_size=1))
    assert exc.value.epoch == 1
    assert exc.value.batch_index == 0


def test_train_log_order_and_csv(tmp_path):
    train_log = TrainLog()
    assert train_log.last() is None
    train_log.append(EpochRecord(1, 2.0, -1.5, 0.25, 0.25, 0.1))
    with pytest.raises(ValueError):
        train_log.append(EpochRecord(3, 1.0, -1.0, 0.0, 0.0, 0.1))
    assert train_log.to_dicts()[0]["c_d"] == 0.25

    path = train_log.save_csv(tmp_path / "log.csv")
    assert path.read_text().splitlines() == ["epoch,loss,r_d,c_d,l_d,seconds", "1,2.0,-1.5,0.25,0.25,0.1"]
