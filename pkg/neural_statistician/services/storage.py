# neural_statistician/services/storage.py
"""
File storage for set corpora and tabular outputs.

NSDS layout (version 1, integers little-endian u32):

    "NSDS" | version | n_sets | sample_size | n_features      (20-byte header)
    | n_sets * sample_size * n_features float32 LE values, row-major
    | optional label block: "NSLB" | json_len | JSON {set_ids, labels, affine}

CSV outputs go to a file, or to stdout when no path is given.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import struct
import sys
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Sequence, Union

import numpy as np

from neural_statistician.core.config import settings
from neural_statistician.core.errors import StatisticianError
from neural_statistician.services.corpus import AffineMap, DatasetBatch, SetLabel

logger = logging.getLogger(__name__)

MAGIC = b"NSDS"
LABEL_MAGIC = b"NSLB"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")
_U32 = struct.Struct("<I")
HEADER_SIZE = _HEADER.size

LABEL_COLUMNS = ["set_id", "family", "mean", "variance"]


class SetFormatError(StatisticianError):
    """Raised for NSDS files with a bad header, truncated payload or malformed label block."""

    def __init__(
        self,
        message: str,
        expected: Optional[int] = None,
        actual: Optional[int] = None,
    ) -> None:
        self.expected = expected
        self.actual = actual
        super().__init__(message)


def ensure_data_dir() -> Path:
    """Ensure the configured data directory exists and return it."""
    settings.data_dir.mkdir(parents=True, exist_ok=True)
    return settings.data_dir


def data_path(filename: str) -> Path:
    """Path of `filename` inside the data directory."""
    return ensure_data_dir() / filename


def label_sidecar_path(corpus_path: Union[str, Path]) -> Path:
    """corpus.nsds -> corpus.labels.csv"""
    corpus_path = Path(corpus_path)
    return corpus_path.with_name(corpus_path.stem + ".labels.csv")


def _label_block(corpus: DatasetBatch) -> bytes:
    default_ids = np.array_equal(corpus.set_ids, np.arange(len(corpus)))
    if corpus.labels is None and corpus.affine is None and default_ids:
        return b""
    doc: Dict[str, Any] = {
        "set_ids": corpus.set_ids.tolist(),
        "labels": None if corpus.labels is None else [label.to_dict() for label in corpus.labels],
        "affine": None if corpus.affine is None else corpus.affine.to_dict(),
    }
    payload = json.dumps(doc, sort_keys=True).encode("utf-8")
    return LABEL_MAGIC + _U32.pack(len(payload)) + payload


def save_sets(path: Union[str, Path], corpus: DatasetBatch) -> Path:
    """Write a corpus as NSDS. Values are stored at 32-bit precision."""
    path = Path(path)
    n_sets, sample_size, n_features = corpus.values.shape
    header = _HEADER.pack(MAGIC, VERSION, n_sets, sample_size, n_features)
    payload = np.ascontiguousarray(corpus.values, dtype="<f4").tobytes()

    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        f.write(header)
        f.write(payload)
        f.write(_label_block(corpus))
    logger.info("Saved %d sets (%d x %d) to %s", n_sets, sample_size, n_features, path)
    return path


def load_sets(path: Union[str, Path]) -> DatasetBatch:
    """
    Read an NSDS corpus.

    Raises:
        SetFormatError: bad magic or version, truncated payload, malformed label block.
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise SetFormatError(f"Cannot read set file {path}: {e}") from e

    if len(data) < HEADER_SIZE:
        raise SetFormatError(f"{path}: truncated header", expected=HEADER_SIZE, actual=len(data))
    magic, version, n_sets, sample_size, n_features = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise SetFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise SetFormatError(f"{path}: unsupported version {version}", expected=VERSION, actual=version)

    payload_size = 4 * n_sets * sample_size * n_features
    end = HEADER_SIZE + payload_size
    if len(data) < end:
        raise SetFormatError(
            f"{path}: truncated payload", expected=payload_size, actual=len(data) - HEADER_SIZE
        )
    values = np.frombuffer(data, dtype="<f4", count=n_sets * sample_size * n_features, offset=HEADER_SIZE)
    values = values.reshape(n_sets, sample_size, n_features).astype(np.float64)

    labels = None
    set_ids = None
    affine = None
    if len(data) > end:
        doc = _parse_label_block(path, data[end:])
        set_ids = doc.get("set_ids")
        try:
            if doc.get("labels") is not None:
                labels = [SetLabel.from_dict(item) for item in doc["labels"]]
            if doc.get("affine") is not None:
                affine = AffineMap.from_dict(doc["affine"])
        except (AttributeError, KeyError, TypeError) as e:
            raise SetFormatError(f"{path}: malformed label block: {e}") from e

    try:
        return DatasetBatch(values=values, labels=labels, set_ids=set_ids, affine=affine)
    except StatisticianError as e:
        raise SetFormatError(f"{path}: inconsistent label block: {e}") from e


def _parse_label_block(path: Path, block: bytes) -> Dict[str, Any]:
    prefix = len(LABEL_MAGIC) + _U32.size
    if len(block) < prefix or block[: len(LABEL_MAGIC)] != LABEL_MAGIC:
        raise SetFormatError(f"{path}: unrecognized data after payload")
    (json_len,) = _U32.unpack_from(block, len(LABEL_MAGIC))
    if len(block) - prefix != json_len:
        raise SetFormatError(
            f"{path}: label block size mismatch", expected=json_len, actual=len(block) - prefix
        )
    try:
        doc = json.loads(block[prefix:].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise SetFormatError(f"{path}: malformed label block: {e}") from e
    if not isinstance(doc, dict):
        raise SetFormatError(f"{path}: label block must be a JSON object")
    return doc


def write_csv(
    path: Optional[Union[str, Path]],
    header: Sequence[str],
    rows: Iterable[Sequence[Any]],
) -> Optional[Path]:
    """Write rows to `path`, or to stdout when `path` is None."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_format_cell(cell) for cell in row])

    if path is None:
        sys.stdout.write(buffer.getvalue())
        return None
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buffer.getvalue(), encoding="utf-8")
    return path


def _format_cell(cell: Any) -> Any:
    if cell is None:
        return ""
    if isinstance(cell, (float, np.floating)):
        return repr(float(cell))
    if isinstance(cell, np.integer):
        return int(cell)
    return cell


def save_label_csv(path: Union[str, Path], corpus: DatasetBatch) -> Path:
    """Label sidecar with columns set_id,family,mean,variance."""
    labels = corpus.labels or [SetLabel() for _ in range(len(corpus))]
    rows = (
        [set_id, label.family if label.family is not None else label.class_key, label.mean, label.variance]
        for set_id, label in zip(corpus.set_ids, labels)
    )
    write_csv(path, LABEL_COLUMNS, rows)
    return Path(path)
