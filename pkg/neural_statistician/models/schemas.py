# neural_statistician/models/schemas.py
"""
Pydantic models (schemas) for model, training and run configuration.

These define the shape of the JSON config document accepted by the CLI.
Unknown keys are rejected everywhere.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from neural_statistician.core.errors import StatisticianError


class ConfigError(StatisticianError):
    """Raised for invalid or unreadable configuration documents."""


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n_features: int = Field(1, ge=1, description="Dimensionality n of one datapoint x")
    c_dim: int = Field(3, ge=1, description="Context dimensionality l")
    z_dim: int = Field(32, ge=1, description="Latent dimensionality of every z layer")
    n_stochastic_layers: int = Field(1, ge=1, description="Number L of stochastic z layers")
    hidden_width: int = Field(128, ge=1, description="Units per dense hidden layer")
    hidden_depth: int = Field(3, ge=1, description="Dense hidden layers per network")
    activation: Literal["relu", "elu"] = Field("relu", description="Hidden activation")
    likelihood: Literal["gaussian", "bernoulli"] = Field(
        "gaussian", description="Observation likelihood p(x | z, c)"
    )
    pooling: Literal["mean", "sum", "max"] = Field(
        "mean", description="Exchangeable pooling in the statistic network"
    )
    sample_dropout_rate: float = Field(
        0.0, ge=0.0, lt=1.0, description="Probability of dropping a sample from pooling"
    )
    append_count_feature: bool = Field(
        False, description="Append kept-count / max_set_size to the pooled vector"
    )
    max_set_size: int = Field(200, ge=1, description="Scale for the count feature")
    shared_encoder: bool = Field(
        False, description="Inference nets consume the statistic encoder's features"
    )
    shared_observation_variance: bool = Field(
        False, description="One learned log-variance per feature for all datapoints"
    )


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    batch_size: int = Field(16, ge=1, description="Datasets per minibatch")
    epochs: int = Field(50, ge=1, description="Fixed epoch budget")
    lr: float = Field(1e-3, ge=0.0, description="Adam learning rate")
    beta1: float = Field(0.9, ge=0.0, lt=1.0, description="Adam first-moment decay")
    beta2: float = Field(0.999, ge=0.0, lt=1.0, description="Adam second-moment decay")
    eps: float = Field(1e-8, ge=0.0, description="Adam denominator epsilon")
    seed: int = Field(0, ge=0, description="Seed for init, shuffling and noise")
    mc_samples: int = Field(1, ge=1, description="Monte-Carlo draws of (c, z) per step")
    checkpoint_every: int = Field(10, ge=0, description="Epochs between checkpoints (0 = final only)")
    checkpoint_path: Optional[Path] = Field(None, description="Final checkpoint file (NSTM)")
    log_path: Optional[Path] = Field(None, description="TrainLog CSV file")
    fixed_noise: bool = Field(False, description="Reuse per-set noise in every epoch")
    log_timing: bool = Field(True, description="Record wall-clock seconds in the TrainLog")


class DataPaths(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    corpus: Optional[Path] = Field(None, description="Training corpus (NSDS)")
    validation: Optional[Path] = Field(None, description="Held-out corpus (NSDS)")


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    data: DataPaths = Field(default_factory=DataPaths)


PRESETS: Dict[str, Dict[str, Any]] = {
    # 1-D family sets: one z layer of 32 units, 3 context units, 128x3 relu nets
    "synthetic": {
        "model": {
            "n_features": 1,
            "c_dim": 3,
            "z_dim": 32,
            "n_stochastic_layers": 1,
            "hidden_width": 128,
            "hidden_depth": 3,
            "activation": "relu",
            "max_set_size": 200,
        },
        "train": {"epochs": 50, "batch_size": 16},
    },
    # spatial MNIST: three 2-unit z layers, 64 context units, 256x3 relu nets
    "spatial": {
        "model": {
            "n_features": 2,
            "c_dim": 64,
            "z_dim": 2,
            "n_stochastic_layers": 3,
            "hidden_width": 256,
            "hidden_depth": 3,
            "activation": "relu",
            "max_set_size": 50,
        },
        "train": {"epochs": 300, "batch_size": 16},
    },
}


def _merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def build_run_config(
    preset: Optional[str] = None,
    config_path: Optional[Path] = None,
    overrides: Optional[Dict[str, Dict[str, Any]]] = None,
) -> RunConfig:
    """
    Resolve a RunConfig. Precedence: preset < JSON document < overrides.

    Raises:
        ConfigError: unknown preset, unreadable JSON, or validation failure.
    """
    doc: Dict[str, Any] = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"Unknown preset '{preset}'. Choose from: {', '.join(PRESETS)}")
        doc = _merge(doc, PRESETS[preset])

    if config_path is not None:
        try:
            loaded = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read config {config_path}: {e}") from e
        if not isinstance(loaded, dict):
            raise ConfigError(f"Config {config_path} must be a JSON object")
        doc = _merge(doc, loaded)

    if overrides:
        cleaned = {
            section: {k: v for k, v in values.items() if v is not None}
            for section, values in overrides.items()
        }
        doc = _merge(doc, cleaned)

    try:
        return RunConfig.model_validate(doc)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e
