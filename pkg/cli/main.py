# cli/main.py
"""
Command-line interface for the neural statistician.

Usage examples (from project root, inside Poetry env):
  poetry run nstat gen-data synthetic1d --sets 10000 --samples 200 --seed 1 --out corpus.nsds
  poetry run nstat train --preset synthetic --corpus corpus.nsds --checkpoint model.nstm
  poetry run nstat embed --checkpoint model.nstm --corpus corpus.nsds --out embed.csv
  poetry run nstat eval-fewshot --checkpoint model.nstm --corpus heldout.nsds --ways 4 --shots 1

CSV outputs go to --out, or to stdout when it is omitted. Errors are printed
to stderr as "[Error] ..." with exit code 1; bad flags exit with code 2.
"""

from __future__ import annotations

import contextlib
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional

import numpy as np
import typer

from neural_statistician.core.config import configure_logging
from neural_statistician.core.errors import StatisticianError
from neural_statistician.models.checkpoint import load_checkpoint
from neural_statistician.models.schemas import PRESETS, build_run_config
from neural_statistician.models.statistician import ElboTerms, NeuralStatistician
from neural_statistician.services.algorithms import (
    ContextPosterior,
    conditional_sample,
    encode_sets,
    few_shot_classify,
    fewshot_episode_eval,
    representative_subsample,
    sample_dataset,
)
from neural_statistician.services.corpus import DatasetBatch
from neural_statistician.services.mnist import build_spatial_corpus, fetch_mnist, load_idx
from neural_statistician.services.storage import (
    data_path,
    label_sidecar_path,
    load_sets,
    save_label_csv,
    save_sets,
    write_csv,
)
from neural_statistician.services.synthetic import gen_synthetic_1d
from neural_statistician.services.training import evaluate, fit

app = typer.Typer(help="Neural statistician: learn, sample and summarize sets of data.")
gen_app = typer.Typer(help="Generate set corpora (NSDS + label CSV).")
app.add_typer(gen_app, name="gen-data")


@app.callback()
def main(
    log_level: Optional[str] = typer.Option(
        None, "--log-level", help="Logging level (default: NSTAT_LOG_LEVEL or INFO)."
    ),
) -> None:
    configure_logging(log_level)


@contextlib.contextmanager
def _errors() -> Iterator[None]:
    """Turn domain and IO failures into '[Error] ...' on stderr and exit code 1."""
    try:
        yield
    except (StatisticianError, OSError) as e:
        typer.echo(f"[Error] {e}", err=True)
        raise typer.Exit(code=1)


def _print_corpus_summary(corpus: DatasetBatch, path: Path) -> None:
    typer.echo(f"\nCorpus written to {path}")
    typer.echo(f"  Sets:        {len(corpus)}")
    typer.echo(f"  Sample size: {corpus.sample_size}")
    typer.echo(f"  Features:    {corpus.n_features}\n")


def _print_terms(title: str, terms: ElboTerms) -> None:
    values = terms.to_dict()
    typer.echo(f"\n{title}")
    typer.echo(f"  ELBO (total): {values['total']:.6f}")
    typer.echo(f"  R_D:          {values['r_d']:.6f}")
    typer.echo(f"  C_D:          {values['c_d']:.6f}")
    typer.echo(f"  L_D:          {values['l_d']:.6f}\n")


def _point_rows(points: np.ndarray) -> List[List[Any]]:
    return [[i, *row] for i, row in enumerate(points)]


def _point_header(n_features: int) -> List[str]:
    return ["index"] + [f"x_{j + 1}" for j in range(n_features)]


def _select_set(corpus: DatasetBatch, set_index: int) -> np.ndarray:
    if not 0 <= set_index < len(corpus):
        raise StatisticianError(f"--set-index {set_index} out of range for {len(corpus)} sets")
    return corpus.values[set_index]


def _check_features(model: NeuralStatistician, corpus: DatasetBatch) -> None:
    if corpus.n_features != model.config.n_features:
        raise StatisticianError(
            f"checkpoint expects {model.config.n_features} features, corpus has {corpus.n_features}"
        )


def _unstandardize(points: np.ndarray, corpus: Optional[DatasetBatch]) -> np.ndarray:
    if corpus is None or corpus.affine is None:
        return points
    return corpus.affine.invert(points)


# ----------------------------------------------------------------------
# Data
# ----------------------------------------------------------------------


@gen_app.command("synthetic1d")
def gen_synthetic(
    sets: int = typer.Option(10000, "--sets", min=1, help="Number of sets."),
    samples: int = typer.Option(200, "--samples", min=1, help="Samples per set."),
    seed: int = typer.Option(0, "--seed", min=0, help="Base seed."),
    workers: int = typer.Option(1, "--workers", min=1, help="Generation threads."),
    out: Optional[Path] = typer.Option(
        None, "--out", "-o", help="Output NSDS file (default: <data_dir>/synthetic1d.nsds)."
    ),
) -> None:
    """
    Generate 1-D sets from exponential, gaussian, uniform and laplacian families.
    """
    with _errors():
        corpus = gen_synthetic_1d(sets, samples, seed, workers)
        path = save_sets(out or data_path("synthetic1d.nsds"), corpus)
        save_label_csv(label_sidecar_path(path), corpus)
    _print_corpus_summary(corpus, path)


@gen_app.command("spatial-mnist")
def gen_spatial(
    idx: Path = typer.Option(..., "--idx", help="MNIST images IDX file (.gz accepted)."),
    labels_idx: Optional[Path] = typer.Option(None, "--labels-idx", help="MNIST labels IDX file."),
    points: int = typer.Option(50, "--points", min=1, help="Points sampled per image."),
    limit: Optional[int] = typer.Option(None, "--limit", min=1, help="Use only the first N images."),
    seed: int = typer.Option(0, "--seed", min=0, help="Base seed."),
    workers: int = typer.Option(1, "--workers", min=1, help="Generation threads."),
    out: Optional[Path] = typer.Option(
        None, "--out", "-o", help="Output NSDS file (default: <data_dir>/spatial_mnist.nsds)."
    ),
) -> None:
    """
    Turn MNIST digits into standardized 2-D point sets.
    """
    with _errors():
        images = load_idx(idx)
        labels = load_idx(labels_idx) if labels_idx is not None else None
        corpus = build_spatial_corpus(images, labels, points, seed, limit, workers)
        path = save_sets(out or data_path("spatial_mnist.nsds"), corpus)
        save_label_csv(label_sidecar_path(path), corpus)
    _print_corpus_summary(corpus, path)


@app.command("fetch-mnist")
def fetch(
    dest: Optional[Path] = typer.Option(None, "--dest", help="Target folder (default: <data_dir>/mnist)."),
) -> None:
    """
    Download the MNIST IDX files.
    """
    with _errors():
        paths = fetch_mnist(dest)
    for path in paths:
        typer.echo(f"  {path}")


# ----------------------------------------------------------------------
# Training
# ----------------------------------------------------------------------


@app.command()
def train(
    corpus: Optional[Path] = typer.Option(None, "--corpus", help="Training corpus (NSDS)."),
    validation: Optional[Path] = typer.Option(None, "--validation", help="Validation corpus (NSDS)."),
    config: Optional[Path] = typer.Option(None, "--config", help="JSON run configuration."),
    preset: Optional[str] = typer.Option(
        None, "--preset", help=f"Architecture preset: {', '.join(PRESETS)}."
    ),
    epochs: Optional[int] = typer.Option(None, "--epochs", help="Epoch budget."),
    batch_size: Optional[int] = typer.Option(None, "--batch-size", help="Datasets per batch (default 16)."),
    lr: Optional[float] = typer.Option(None, "--lr", help="Adam learning rate (default 1e-3)."),
    seed: Optional[int] = typer.Option(None, "--seed", help="Seed for init, shuffling and noise."),
    mc_samples: Optional[int] = typer.Option(None, "--mc-samples", help="Monte-Carlo draws per step."),
    dropout: Optional[float] = typer.Option(None, "--sample-dropout", help="Sample dropout rate."),
    checkpoint: Optional[Path] = typer.Option(
        None, "--checkpoint", help="Final checkpoint (default: <data_dir>/model.nstm)."
    ),
    checkpoint_every: Optional[int] = typer.Option(
        None, "--checkpoint-every", help="Epochs between checkpoints (0 = final only)."
    ),
    log: Optional[Path] = typer.Option(None, "--log", help="TrainLog CSV path."),
    no_timing: bool = typer.Option(False, "--no-timing", help="Write 0 seconds in the TrainLog."),
    progress: bool = typer.Option(False, "--progress", help="Show a progress bar per epoch."),
) -> None:
    """
    Train a model on a set corpus and print the final bound terms.
    """
    overrides: Dict[str, Dict[str, Any]] = {
        "model": {"sample_dropout_rate": dropout},
        "train": {
            "epochs": epochs,
            "batch_size": batch_size,
            "lr": lr,
            "seed": seed,
            "mc_samples": mc_samples,
            "checkpoint_every": checkpoint_every,
            "checkpoint_path": checkpoint,
            "log_path": log,
            "log_timing": False if no_timing else None,
        },
        "data": {"corpus": corpus, "validation": validation},
    }
    with _errors():
        run = build_run_config(preset, config, overrides)
        if run.data.corpus is None:
            raise StatisticianError("no training corpus: pass --corpus or set data.corpus in --config")
        train_cfg = run.train
        if train_cfg.checkpoint_path is None:
            train_cfg = train_cfg.model_copy(update={"checkpoint_path": data_path("model.nstm")})

        train_set = load_sets(run.data.corpus)
        val_set = load_sets(run.data.validation) if run.data.validation is not None else None
        model = NeuralStatistician(run.model, seed=train_cfg.seed)
        train_log = fit(model, train_set, train_cfg, validation=val_set, progress=progress)
        terms = evaluate(model, val_set if val_set is not None else train_set, seed=train_cfg.seed)

    last = train_log.last()
    typer.echo(f"\nTrained {len(train_log)} epochs; final epoch loss {last.loss:.6f}")
    typer.echo(f"Checkpoint saved to: {train_cfg.checkpoint_path}")
    if train_cfg.log_path is not None:
        typer.echo(f"TrainLog saved to: {train_cfg.log_path}")
    _print_terms("Final bound (per set)", terms)


@app.command("evaluate")
def evaluate_cmd(
    checkpoint: Path = typer.Option(..., "--checkpoint", help="Model checkpoint (NSTM)."),
    corpus: Path = typer.Option(..., "--corpus", help="Corpus to score (NSDS)."),
    seed: int = typer.Option(0, "--seed", min=0, help="Noise seed."),
) -> None:
    """
    Average the bound over every set of a corpus.
    """
    with _errors():
        model = load_checkpoint(checkpoint)
        sets = load_sets(corpus)
        _check_features(model, sets)
        terms = evaluate(model, sets, seed=seed)
    _print_terms(f"Bound over {len(sets)} sets", terms)


# ----------------------------------------------------------------------
# Inference-time procedures
# ----------------------------------------------------------------------


@app.command()
def embed(
    checkpoint: Path = typer.Option(..., "--checkpoint", help="Model checkpoint (NSTM)."),
    corpus: Path = typer.Option(..., "--corpus", help="Corpus to embed (NSDS)."),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output CSV (default: stdout)."),
) -> None:
    """
    Write the posterior mean of c for every set: set_id,family,mean,variance,c_1..c_l.
    """
    with _errors():
        model = load_checkpoint(checkpoint)
        sets = load_sets(corpus)
        _check_features(model, sets)
        means = encode_sets(model, sets.values).mean.data
        labels = sets.labels
        header = ["set_id", "family", "mean", "variance"] + [f"c_{j + 1}" for j in range(means.shape[1])]
        rows = []
        for i, set_id in enumerate(sets.set_ids):
            label = labels[i] if labels is not None else None
            family = None if label is None else (label.family or label.class_key)
            rows.append(
                [set_id, family, None if label is None else label.mean, None if label is None else label.variance]
                + list(means[i])
            )
        write_csv(out, header, rows)


@app.command()
def sample(
    checkpoint: Path = typer.Option(..., "--checkpoint", help="Model checkpoint (NSTM)."),
    k: int = typer.Option(..., "--k", min=1, help="Datapoints to generate."),
    seed: int = typer.Option(0, "--seed", min=0, help="Sampling seed."),
    mean_path: bool = typer.Option(False, "--mean-path", help="Use zero noise everywhere."),
    corpus: Optional[Path] = typer.Option(
        None, "--corpus", help="Map samples back through this corpus's standardization."
    ),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output CSV (default: stdout)."),
) -> None:
    """
    Sample a new dataset of size k from the prior over c.
    """
    with _errors():
        model = load_checkpoint(checkpoint)
        rng = None if mean_path else np.random.default_rng(seed)
        points = sample_dataset(model, k, rng)
        points = _unstandardize(points, load_sets(corpus) if corpus is not None else None)
        write_csv(out, _point_header(model.config.n_features), _point_rows(points))


@app.command("cond-sample")
def cond_sample(
    checkpoint: Path = typer.Option(..., "--checkpoint", help="Model checkpoint (NSTM)."),
    corpus: Path = typer.Option(..., "--corpus", help="Corpus holding the conditioning set."),
    set_index: int = typer.Option(0, "--set-index", help="Row of the conditioning set in the corpus."),
    k: int = typer.Option(..., "--k", min=0, help="Datapoints to generate."),
    seed: int = typer.Option(0, "--seed", min=0, help="Sampling seed."),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output CSV (default: stdout)."),
) -> None:
    """
    Sample k datapoints conditioned on one set (c = posterior mean).
    """
    with _errors():
        model = load_checkpoint(checkpoint)
        sets = load_sets(corpus)
        _check_features(model, sets)
        posterior = ContextPosterior.of(model, _select_set(sets, set_index))
        points = conditional_sample(model, posterior, k, np.random.default_rng(seed))
        write_csv(out, _point_header(model.config.n_features), _point_rows(_unstandardize(points, sets)))
    typer.echo(f"c = posterior mean over {posterior.source_size} points", err=True)


@app.command()
def summarize(
    checkpoint: Path = typer.Option(..., "--checkpoint", help="Model checkpoint (NSTM)."),
    corpus: Path = typer.Option(..., "--corpus", help="Corpus holding the set to summarize."),
    set_index: int = typer.Option(0, "--set-index", help="Row of the set in the corpus."),
    k: int = typer.Option(6, "--k", min=1, help="Summary size."),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output CSV (default: stdout)."),
) -> None:
    """
    Select the k points whose context posterior stays closest to the full set's.
    """
    with _errors():
        model = load_checkpoint(checkpoint)
        sets = load_sets(corpus)
        _check_features(model, sets)
        result = representative_subsample(model, _select_set(sets, set_index), k)
        points = _unstandardize(result.points, sets)
        rows = [[i, *row] for i, row in zip(result.indices, points)]
        write_csv(out, _point_header(model.config.n_features), rows)
    typer.echo(f"KL(q(c|D) || q(c|S)) = {result.kl_path[-1]:.6f}", err=True)


@app.command()
def classify(
    checkpoint: Path = typer.Option(..., "--checkpoint", help="Model checkpoint (NSTM)."),
    support: Path = typer.Option(..., "--support", help="Labelled support corpus (NSDS)."),
    queries: Path = typer.Option(..., "--queries", help="Corpus of query sets (NSDS)."),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output CSV (default: stdout)."),
) -> None:
    """
    Classify each query set by the support class whose context is nearest in KL.
    Classes are ordered by name; ties go to the first.
    """
    with _errors():
        model = load_checkpoint(checkpoint)
        support_sets = load_sets(support)
        query_sets = load_sets(queries)
        _check_features(model, support_sets)
        _check_features(model, query_sets)

        keys = support_sets.class_keys()
        classes = sorted({key for key in keys if key is not None})
        class_sets = [
            support_sets.values[[i for i, key in enumerate(keys) if key == name]].reshape(-1, model.config.n_features)
            for name in classes
        ]
        rows = []
        for set_id, query in zip(query_sets.set_ids, query_sets.values):
            predicted = few_shot_classify(model, class_sets, query)
            rows.append([set_id, classes[predicted], predicted])
        write_csv(out, ["set_id", "predicted_class", "class_index"], rows)


@app.command("eval-fewshot")
def eval_fewshot(
    checkpoint: Path = typer.Option(..., "--checkpoint", help="Model checkpoint (NSTM)."),
    corpus: Path = typer.Option(..., "--corpus", help="Labelled held-out corpus (NSDS)."),
    ways: int = typer.Option(4, "--ways", min=2, help="Classes per episode (K)."),
    shots: int = typer.Option(1, "--shots", min=1, help="Support sets per class."),
    episodes: int = typer.Option(100, "--episodes", min=1, help="Number of episodes."),
    queries_per_class: Optional[int] = typer.Option(
        None, "--queries-per-class", min=1, help="Cap on query sets per class per episode."
    ),
    seed: int = typer.Option(0, "--seed", min=0, help="Episode seed."),
    workers: int = typer.Option(1, "--workers", min=1, help="Episode threads."),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output CSV (default: stdout)."),
) -> None:
    """
    K-way k-shot episode evaluation: rows episode,accuracy then a mean row.
    """
    with _errors():
        model = load_checkpoint(checkpoint)
        sets = load_sets(corpus)
        _check_features(model, sets)
        report = fewshot_episode_eval(
            model,
            sets,
            k_shot=shots,
            k_way=ways,
            n_episodes=episodes,
            rng=np.random.default_rng(seed),
            workers=workers,
            queries_per_class=queries_per_class,
        )
        rows: List[List[Any]] = [[i + 1, acc] for i, acc in enumerate(report.accuracies)]
        rows.append(["mean", report.mean])
        write_csv(out, ["episode", "accuracy"], rows)
    typer.echo(f"{ways}-way {shots}-shot accuracy: {report.mean:.4f} +/- {report.stderr:.4f}", err=True)


if __name__ == "__main__":
    app()
