# tests/test_cli.py

from __future__ import annotations

import csv
import gzip
import json
import struct
from pathlib import Path

import numpy as np
import pytest
from typer.testing import CliRunner

from cli.main import app
from neural_statistician.models.checkpoint import load_checkpoint
from neural_statistician.services.storage import load_sets

runner = CliRunner()

TINY_RUN = {
    "model": {
        "n_features": 1,
        "c_dim": 2,
        "z_dim": 2,
        "hidden_width": 8,
        "hidden_depth": 1,
        "max_set_size": 10,
    },
    "train": {"epochs": 1, "batch_size": 8},
}


def _rows(path: Path):
    with path.open() as f:
        return list(csv.reader(f))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "train.nsds"
    result = runner.invoke(
        app, ["gen-data", "synthetic1d", "--sets", "24", "--samples", "10", "--seed", "1", "--out", str(corpus)]
    )
    assert result.exit_code == 0, result.output

    config = root / "run.json"
    config.write_text(json.dumps(TINY_RUN))
    checkpoint = root / "model.nstm"
    log = root / "train.csv"
    result = runner.invoke(
        app,
        [
            "train",
            "--corpus", str(corpus),
            "--config", str(config),
            "--checkpoint", str(checkpoint),
            "--log", str(log),
            "--no-timing",
        ],
    )
    assert result.exit_code == 0, result.output
    return {"root": root, "corpus": corpus, "checkpoint": checkpoint, "log": log}


def test_gen_data_writes_corpus_and_labels(workspace):
    corpus = load_sets(workspace["corpus"])
    assert corpus.values.shape == (24, 10, 1)
    rows = _rows(workspace["root"] / "train.labels.csv")
    assert rows[0] == ["set_id", "family", "mean", "variance"]
    assert len(rows) == 25


def test_train_outputs(workspace):
    model = load_checkpoint(workspace["checkpoint"])
    assert model.config.c_dim == 2
    rows = _rows(workspace["log"])
    assert rows[0] == ["epoch", "loss", "r_d", "c_d", "l_d", "seconds"]
    assert rows[1][0] == "1" and rows[1][-1] == "0.0"


def test_evaluate(workspace):
    args = ["evaluate", "--checkpoint", str(workspace["checkpoint"]), "--corpus", str(workspace["corpus"])]
    first = runner.invoke(app, args)
    second = runner.invoke(app, args)
    assert first.exit_code == 0
    assert "ELBO (total)" in first.output
    terms = [line for line in first.output.splitlines() if line.startswith("  ")]
    assert len(terms) == 4
    assert terms == [line for line in second.output.splitlines() if line.startswith("  ")]


def test_embed(workspace):
    out = workspace["root"] / "embed.csv"
    result = runner.invoke(
        app,
        ["embed", "--checkpoint", str(workspace["checkpoint"]), "--corpus", str(workspace["corpus"]), "--out", str(out)],
    )
    assert result.exit_code == 0, result.output
    rows = _rows(out)
    assert rows[0] == ["set_id", "family", "mean", "variance", "c_1", "c_2"]
    assert len(rows) == 25
    assert rows[1][1] in {"exponential", "gaussian", "uniform", "laplacian"}


def test_sample_is_seeded(workspace):
    outs = []
    for name in ("a.csv", "b.csv"):
        out = workspace["root"] / name
        result = runner.invoke(
            app, ["sample", "--checkpoint", str(workspace["checkpoint"]), "--k", "5", "--seed", "3", "--out", str(out)]
        )
        assert result.exit_code == 0, result.output
        outs.append(out.read_text())
    assert outs[0] == outs[1]
    rows = _rows(workspace["root"] / "a.csv")
    assert rows[0] == ["index", "x_1"]
    assert len(rows) == 6


def test_cond_sample(workspace):
    out = workspace["root"] / "cond.csv"
    result = runner.invoke(
        app,
        [
            "cond-sample",
            "--checkpoint", str(workspace["checkpoint"]),
            "--corpus", str(workspace["corpus"]),
            "--set-index", "2",
            "--k", "4",
            "--out", str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    assert len(_rows(out)) == 5
    assert "posterior mean over 10 points" in result.output


def test_cond_sample_bad_index(workspace):
    result = runner.invoke(
        app,
        [
            "cond-sample",
            "--checkpoint", str(workspace["checkpoint"]),
            "--corpus", str(workspace["corpus"]),
            "--set-index", "99",
            "--k", "4",
        ],
    )
    assert result.exit_code == 1
    assert "[Error]" in result.output


def test_summarize(workspace):
    out = workspace["root"] / "summary.csv"
    result = runner.invoke(
        app,
        [
            "summarize",
            "--checkpoint", str(workspace["checkpoint"]),
            "--corpus", str(workspace["corpus"]),
            "--k", "3",
            "--out", str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    rows = _rows(out)
    assert len(rows) == 4
    indices = [int(r[0]) for r in rows[1:]]
    assert indices == sorted(indices) and all(0 <= i < 10 for i in indices)
    # survivors are points of the chosen set
    corpus = load_sets(workspace["corpus"])
    for row, i in zip(rows[1:], indices):
        assert float(row[1]) == corpus.values[0, i, 0]


def test_classify(workspace):
    out = workspace["root"] / "classes.csv"
    result = runner.invoke(
        app,
        [
            "classify",
            "--checkpoint", str(workspace["checkpoint"]),
            "--support", str(workspace["corpus"]),
            "--queries", str(workspace["corpus"]),
            "--out", str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    rows = _rows(out)
    assert rows[0] == ["set_id", "predicted_class", "class_index"]
    assert len(rows) == 25
    classes = sorted({r[1] for r in _rows(workspace["root"] / "train.labels.csv")[1:]})
    for _, name, index in rows[1:]:
        assert classes[int(index)] == name


def test_eval_fewshot_is_seeded(workspace):
    texts = []
    for name in ("fs_a.csv", "fs_b.csv"):
        out = workspace["root"] / name
        result = runner.invoke(
            app,
            [
                "eval-fewshot",
                "--checkpoint", str(workspace["checkpoint"]),
                "--corpus", str(workspace["corpus"]),
                "--ways", "2",
                "--episodes", "4",
                "--seed", "7",
                "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        texts.append(out.read_text())
    assert texts[0] == texts[1]
    rows = _rows(workspace["root"] / "fs_a.csv")
    assert rows[0] == ["episode", "accuracy"]
    assert [r[0] for r in rows[1:]] == ["1", "2", "3", "4", "mean"]
    assert all(0.0 <= float(r[1]) <= 1.0 for r in rows[1:])


def test_eval_fewshot_insufficient_corpus(workspace):
    result = runner.invoke(
        app,
        [
            "eval-fewshot",
            "--checkpoint", str(workspace["checkpoint"]),
            "--corpus", str(workspace["corpus"]),
            "--ways", "9",
        ],
    )
    assert result.exit_code == 1
    assert "[Error]" in result.output


def test_missing_checkpoint(tmp_path, workspace):
    result = runner.invoke(
        app, ["evaluate", "--checkpoint", str(tmp_path / "none.nstm"), "--corpus", str(workspace["corpus"])]
    )
    assert result.exit_code == 1
    assert "[Error]" in result.output


def test_train_needs_a_corpus(tmp_path):
    result = runner.invoke(app, ["train", "--checkpoint", str(tmp_path / "m.nstm")])
    assert result.exit_code == 1
    assert "corpus" in result.output


def test_train_rejects_bad_preset(tmp_path, workspace):
    result = runner.invoke(app, ["train", "--corpus", str(workspace["corpus"]), "--preset", "huge"])
    assert result.exit_code == 1
    assert "Unknown preset" in result.output


def test_bad_flag_exits_with_usage_error():
    result = runner.invoke(app, ["sample", "--k", "0", "--checkpoint", "x.nstm"])
    assert result.exit_code == 2


def test_spatial_mnist(tmp_path):
    images = np.zeros((2, 6, 6), dtype=np.uint8)
    images[0, 1:3, 1:3] = 200
    images[1, 4, :] = 90
    idx = tmp_path / "images-idx3-ubyte.gz"
    with gzip.open(idx, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, 2, 6, 6) + images.tobytes())
    labels = tmp_path / "labels-idx1-ubyte"
    labels.write_bytes(struct.pack(">II", 0x801, 2) + bytes([3, 8]))

    out = tmp_path / "spatial.nsds"
    result = runner.invoke(
        app,
        ["gen-data", "spatial-mnist", "--idx", str(idx), "--labels-idx", str(labels), "--points", "12", "--out", str(out)],
    )
    assert result.exit_code == 0, result.output
    corpus = load_sets(out)
    assert corpus.values.shape == (2, 12, 2)
    assert corpus.class_keys() == ["3", "8"]
    assert corpus.affine is not None
    assert _rows(tmp_path / "spatial.labels.csv")[1] == ["0", "3", "", ""]
