# tests/test_schemas.py

from __future__ import annotations

import json

import pytest
from pydantic import ValidationError

from neural_statistician.models.schemas import PRESETS, ConfigError, ModelConfig, TrainConfig, build_run_config


def test_defaults():
    cfg = build_run_config()
    assert cfg.train.lr == 1e-3
    assert cfg.train.beta1 == 0.9 and cfg.train.beta2 == 0.999
    assert cfg.model.likelihood == "gaussian"
    assert cfg.model.pooling == "mean"


def test_synthetic_preset():
    cfg = build_run_config("synthetic")
    assert (cfg.model.c_dim, cfg.model.z_dim, cfg.model.n_stochastic_layers) == (3, 32, 1)
    assert cfg.model.hidden_width == 128 and cfg.model.hidden_depth == 3


def test_spatial_preset():
    cfg = build_run_config("spatial")
    assert (cfg.model.n_features, cfg.model.c_dim, cfg.model.z_dim) == (2, 64, 2)
    assert cfg.model.n_stochastic_layers == 3


def test_unknown_preset():
    with pytest.raises(ConfigError, match="Unknown preset"):
        build_run_config("cifar")


def test_precedence_preset_then_file_then_overrides(tmp_path):
    doc = tmp_path / "run.json"
    doc.write_text(json.dumps({"model": {"c_dim": 5}, "train": {"epochs": 7, "lr": 0.01}}))
    cfg = build_run_config("synthetic", doc, {"train": {"epochs": 2, "lr": None}})
    assert cfg.model.c_dim == 5
    assert cfg.model.z_dim == 32
    assert cfg.train.epochs == 2
    # None overrides are ignored
    assert cfg.train.lr == 0.01


def test_unreadable_document(tmp_path):
    doc = tmp_path / "bad.json"
    doc.write_text("{not json")
    with pytest.raises(ConfigError, match="Cannot read"):
        build_run_config(config_path=doc)
    with pytest.raises(ConfigError):
        build_run_config(config_path=tmp_path / "absent.json")


def test_document_must_be_an_object(tmp_path):
    doc = tmp_path / "list.json"
    doc.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="JSON object"):
        build_run_config(config_path=doc)


def test_unknown_keys_rejected(tmp_path):
    doc = tmp_path / "run.json"
    doc.write_text(json.dumps({"model": {"colour": "red"}}))
    with pytest.raises(ConfigError, match="Invalid configuration"):
        build_run_config(config_path=doc)


@pytest.mark.parametrize(
    "kwargs",
    [{"c_dim": 0}, {"sample_dropout_rate": 1.0}, {"pooling": "median"}, {"activation": "tanh"}],
)
def test_model_config_validation(kwargs):
    with pytest.raises(ValidationError):
        ModelConfig(**kwargs)


def test_train_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(lr=-1.0)
    with pytest.raises(ValidationError):
        TrainConfig(beta1=1.0)
    assert TrainConfig(lr=0.0).lr == 0.0


def test_presets_validate():
    for name in PRESETS:
        build_run_config(name)
