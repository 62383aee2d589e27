# neural_statistician/services/training.py
"""
Minibatch training and evaluation of the bound.

Noise and sample-dropout masks are drawn per set from generators keyed by
(seed, epoch, set_id), or (seed, set_id) with fixed noise and in evaluate,
so a set's draws do not depend on which batch it lands in.
"""

from __future__ import annotations

import logging
import math
import time
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from neural_statistician.core.errors import StatisticianError
from neural_statistician.core.optim import Adam
from neural_statistician.core.tensor import Tensor, backward, no_grad
from neural_statistician.models.checkpoint import save_checkpoint
from neural_statistician.models.schemas import ModelConfig, TrainConfig
from neural_statistician.models.statistician import (
    ElboNoise,
    ElboTerms,
    NeuralStatistician,
    draw_keep_mask,
)
from neural_statistician.services.corpus import DatasetBatch
from neural_statistician.services.history import EpochRecord, TrainLog

logger = logging.getLogger(__name__)


class TrainingError(StatisticianError):
    """Raised when a training step fails; carries the epoch and batch index."""

    def __init__(self, message: str, epoch: Optional[int] = None, batch_index: Optional[int] = None) -> None:
        self.epoch = epoch
        self.batch_index = batch_index
        super().__init__(message)


def set_noise(
    config: ModelConfig,
    key: Sequence[int],
    sample_size: int,
    n_samples: int = 1,
    dropout: bool = False,
) -> Tuple[List[ElboNoise], Optional[np.ndarray]]:
    """Noise draws (and optionally a keep mask) for one set from the generator keyed by `key`."""
    rng = np.random.default_rng(list(key))
    draws = [ElboNoise.draw(rng, 1, sample_size, config) for _ in range(n_samples)]
    keep = None
    if dropout and config.sample_dropout_rate > 0.0:
        keep = draw_keep_mask(rng, 1, sample_size, config.sample_dropout_rate)
    return draws, keep


def _batch_noise(
    config: ModelConfig,
    keys: Sequence[Sequence[int]],
    sample_size: int,
    n_samples: int,
    dropout: bool,
) -> Tuple[List[ElboNoise], Optional[np.ndarray]]:
    per_set = [set_noise(config, key, sample_size, n_samples, dropout) for key in keys]
    noise = [ElboNoise.stack([draws[s] for draws, _ in per_set]) for s in range(n_samples)]
    masks = [keep for _, keep in per_set]
    keep_mask = None if masks[0] is None else np.concatenate(masks, axis=0)
    return noise, keep_mask


def _check_corpus(model: NeuralStatistician, corpus: DatasetBatch, what: str) -> None:
    if len(corpus) == 0:
        raise TrainingError(f"{what} corpus is empty")
    if corpus.n_features != model.config.n_features:
        raise TrainingError(
            f"{what} corpus has {corpus.n_features} features, model expects {model.config.n_features}"
        )


def periodic_checkpoint_path(final_path: Path, epoch: int) -> Path:
    """model.nstm -> model.epoch0010.nstm"""
    return final_path.with_name(f"{final_path.stem}.epoch{epoch:04d}{final_path.suffix}")


def fit(
    model: NeuralStatistician,
    corpus: DatasetBatch,
    cfg: TrainConfig,
    validation: Optional[DatasetBatch] = None,
    progress: bool = False,
) -> TrainLog:
    """
    Train `model` in place with Adam for cfg.epochs epochs.

    Each epoch shuffles the sets with a generator keyed by (seed, epoch),
    walks batches of cfg.batch_size sets (keeping the short last batch) and
    takes one step on -total per batch. Epoch values are per-set means.

    Raises:
        TrainingError: empty or mismatched corpus, or a failing step (with its batch index).
    """
    _check_corpus(model, corpus, "training")
    if validation is not None:
        _check_corpus(model, validation, "validation")

    optimizer = Adam(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)
    train_log = TrainLog()
    n_sets = len(corpus)
    n_batches = math.ceil(n_sets / cfg.batch_size)
    logger.info(
        "Training on %d sets (%d batches/epoch) for %d epochs, lr=%g",
        n_sets, n_batches, cfg.epochs, cfg.lr,
    )

    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n_sets)
        totals = np.zeros(4)  # loss, r_d, c_d, l_d weighted by batch size

        batches = corpus.batches(cfg.batch_size, order)
        for batch_index, batch in enumerate(
            tqdm(batches, total=n_batches, desc=f"epoch {epoch}", disable=not progress, leave=False)
        ):
            keys = [
                (cfg.seed, int(set_id)) if cfg.fixed_noise else (cfg.seed, epoch, int(set_id))
                for set_id in batch.set_ids
            ]
            noise, keep = _batch_noise(model.config, keys, batch.sample_size, cfg.mc_samples, dropout=True)
            try:
                terms = model.elbo(batch.values, noise=noise, keep_mask=keep, training=True)
                loss = terms.loss
                optimizer.zero_grad()
                backward(loss)
                optimizer.step()
            except StatisticianError as e:
                raise TrainingError(
                    f"epoch {epoch}, batch {batch_index}: {e}", epoch=epoch, batch_index=batch_index
                ) from e

            values = [loss.item(), terms.r_d.item(), terms.c_d.item(), terms.l_d.item()]
            if not math.isfinite(values[0]):
                raise TrainingError(
                    f"epoch {epoch}, batch {batch_index}: non-finite loss", epoch=epoch, batch_index=batch_index
                )
            totals += len(batch) * np.asarray(values)

        means = totals / n_sets
        seconds = time.perf_counter() - started if cfg.log_timing else 0.0
        record = EpochRecord(
            epoch=epoch,
            loss=float(means[0]),
            r_d=float(means[1]),
            c_d=float(means[2]),
            l_d=float(means[3]),
            seconds=float(seconds),
        )
        train_log.append(record)
        logger.info(
            "epoch %d: loss=%.4f r_d=%.4f c_d=%.4f l_d=%.4f (%.1fs)",
            epoch, record.loss, record.r_d, record.c_d, record.l_d, record.seconds,
        )

        if validation is not None:
            val = evaluate(model, validation, seed=cfg.seed)
            logger.info("epoch %d: validation total=%.4f", epoch, val.total.item())

        if (
            cfg.checkpoint_path is not None
            and cfg.checkpoint_every > 0
            and epoch % cfg.checkpoint_every == 0
            and epoch != cfg.epochs
        ):
            save_checkpoint(periodic_checkpoint_path(Path(cfg.checkpoint_path), epoch), model)

    if cfg.checkpoint_path is not None:
        save_checkpoint(cfg.checkpoint_path, model)
    if cfg.log_path is not None:
        train_log.save_csv(cfg.log_path)
    return train_log


def evaluate(
    model: NeuralStatistician,
    corpus: DatasetBatch,
    seed: int = 0,
    batch_size: int = 64,
    n_samples: int = 1,
) -> ElboTerms:
    """
    Bound terms averaged over every set of `corpus`, without dropout or
    parameter updates. Set `i` uses noise keyed by (seed, set_ids[i]), and
    sets are visited in set-id order, so the result does not depend on
    corpus order.
    """
    _check_corpus(model, corpus, "evaluation")

    order = np.argsort(corpus.set_ids, kind="stable")
    totals = np.zeros(3)  # r_d, c_d, l_d
    with no_grad():
        for batch in corpus.batches(batch_size, order):
            keys = [(seed, int(set_id)) for set_id in batch.set_ids]
            noise, _ = _batch_noise(model.config, keys, batch.sample_size, n_samples, dropout=False)
            terms = model.elbo(batch.values, noise=noise)
            totals += len(batch) * np.array([terms.r_d.item(), terms.c_d.item(), terms.l_d.item()])

    r_d, c_d, l_d = (Tensor(v) for v in totals / len(corpus))
    return ElboTerms(r_d=r_d, c_d=c_d, l_d=l_d, total=Tensor(r_d.data - c_d.data - l_d.data))
