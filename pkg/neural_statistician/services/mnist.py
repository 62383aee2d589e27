# neural_statistician/services/mnist.py
"""
MNIST ingestion and spatial-set construction.

- load_idx: parse IDX image (0x00000803) and label (0x00000801) files, plain or gzip.
- spatial_from_image: treat pixel intensities as a density over the grid and
  sample dequantized (x, y) coordinates.
- build_spatial_corpus: one standardized point set per image.
- fetch_mnist: download the public IDX files (CLI helper; the library never
  downloads on its own).
"""

from __future__ import annotations

import gzip
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import httpx
import numpy as np

from neural_statistician.core.config import settings
from neural_statistician.core.errors import StatisticianError
from neural_statistician.services.corpus import AffineMap, CorpusError, DatasetBatch, SetLabel

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
_IDX_RANK = {IDX_IMAGES_MAGIC: 3, IDX_LABELS_MAGIC: 1}

MNIST_FILES = (
    "train-images-idx3-ubyte.gz",
    "train-labels-idx1-ubyte.gz",
    "t10k-images-idx3-ubyte.gz",
    "t10k-labels-idx1-ubyte.gz",
)


class IdxFormatError(StatisticianError):
    """Raised for IDX files with a bad magic number or the wrong payload size."""

    def __init__(self, message: str, expected: Optional[int] = None, actual: Optional[int] = None) -> None:
        self.expected = expected
        self.actual = actual
        super().__init__(message)


class MnistDownloadError(StatisticianError):
    """Raised when the MNIST files cannot be downloaded."""


def _read_bytes(path: Path) -> bytes:
    try:
        if path.suffix == ".gz":
            with gzip.open(path, "rb") as f:
                return f.read()
        return path.read_bytes()
    except (OSError, EOFError) as e:
        raise IdxFormatError(f"Cannot read IDX file {path}: {e}") from e


def load_idx(path: Union[str, Path]) -> np.ndarray:
    """
    Load an IDX file as raw bytes.

    Returns:
        uint8 array of shape (count, rows, cols) for images, (count,) for labels.

    Raises:
        IdxFormatError: bad magic, or a payload shorter or longer than the header declares.
    """
    path = Path(path)
    data = _read_bytes(path)
    if len(data) < 4:
        raise IdxFormatError(f"{path}: file too short for an IDX header", expected=4, actual=len(data))

    (magic,) = struct.unpack(">I", data[:4])
    if magic not in _IDX_RANK:
        raise IdxFormatError(
            f"{path}: magic number mismatch (0x{magic:08x})", expected=IDX_IMAGES_MAGIC, actual=magic
        )
    rank = _IDX_RANK[magic]
    header_size = 4 + 4 * rank
    if len(data) < header_size:
        raise IdxFormatError(
            f"{path}: truncated header", expected=header_size, actual=len(data)
        )
    dims = struct.unpack(f">{rank}I", data[4:header_size])
    expected = int(np.prod(dims, dtype=np.int64))
    actual = len(data) - header_size
    if actual != expected:
        raise IdxFormatError(
            f"{path}: payload has {actual} bytes, header declares {expected}",
            expected=expected,
            actual=actual,
        )
    return np.frombuffer(data, dtype=np.uint8, offset=header_size).reshape(dims).copy()


@dataclass
class SpatialSet:
    points: np.ndarray  # (n_points, 2) as (x, y)
    label: Optional[int] = None


def spatial_from_image(
    image: np.ndarray,
    n_points: int = 50,
    rng: Optional[np.random.Generator] = None,
    label: Optional[int] = None,
) -> SpatialSet:
    """
    Sample pixel indices proportionally to intensity, with replacement, and
    emit (x = col + u1, y = row + u2) with u ~ U[0, 1) per coordinate.
    """
    if n_points < 1:
        raise CorpusError(f"n_points must be >= 1, got {n_points}")
    intensities = np.asarray(image, dtype=np.float64)
    if intensities.ndim != 2:
        raise CorpusError(f"image must be 2-D, got shape {intensities.shape}")
    if np.any(intensities < 0):
        raise CorpusError("image has negative intensities")
    total = intensities.sum()
    if total <= 0:
        raise CorpusError("image has no positive intensity")

    rng = rng if rng is not None else np.random.default_rng()
    cols = intensities.shape[1]
    flat = rng.choice(intensities.size, size=n_points, replace=True, p=intensities.ravel() / total)
    rows_idx, cols_idx = np.divmod(flat, cols)
    u = rng.random((n_points, 2))
    points = np.column_stack([cols_idx + u[:, 0], rows_idx + u[:, 1]])
    return SpatialSet(points=points, label=label)


def build_spatial_corpus(
    images: np.ndarray,
    labels: Optional[Sequence[int]] = None,
    n_points: int = 50,
    seed: int = 0,
    limit: Optional[int] = None,
    workers: int = 1,
) -> DatasetBatch:
    """
    One spatial set per image, standardized by an AffineMap fitted on the
    whole corpus. Image i uses a generator seeded by (seed, i).
    """
    images = np.asarray(images)
    if images.ndim != 3:
        raise CorpusError(f"images must have shape (count, rows, cols), got {images.shape}")
    if labels is not None and len(labels) != images.shape[0]:
        raise CorpusError(f"{len(labels)} labels for {images.shape[0]} images")
    count = images.shape[0] if limit is None else min(limit, images.shape[0])
    if count < 1:
        raise CorpusError("no images to convert")

    def one(i: int) -> SpatialSet:
        label = int(labels[i]) if labels is not None else None
        return spatial_from_image(images[i], n_points, np.random.default_rng([seed, i]), label)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            sets: List[SpatialSet] = list(executor.map(one, range(count)))
    else:
        sets = [one(i) for i in range(count)]

    raw = np.stack([s.points for s in sets])
    affine = AffineMap.fit(raw)
    set_labels = [SetLabel(class_id=s.label) for s in sets] if labels is not None else None
    logger.info("Built %d spatial sets of %d points", count, n_points)
    return DatasetBatch(values=affine.apply(raw), labels=set_labels, affine=affine)


def fetch_mnist(
    dest: Optional[Union[str, Path]] = None,
    files: Sequence[str] = MNIST_FILES,
    base_url: Optional[str] = None,
) -> List[Path]:
    """
    Download the MNIST IDX files into `dest` (default: <data_dir>/mnist).
    Files already present are kept.

    Raises:
        MnistDownloadError: on network errors or non-200 responses.
    """
    dest = Path(dest) if dest is not None else settings.data_dir / "mnist"
    dest.mkdir(parents=True, exist_ok=True)
    base_url = base_url or settings.mnist_base_url

    paths: List[Path] = []
    for name in files:
        path = dest / name
        if path.exists():
            logger.info("Using cached %s", path)
            paths.append(path)
            continue

        url = base_url.rstrip("/") + "/" + name
        try:
            response = httpx.get(url, timeout=settings.http_timeout, follow_redirects=True)
        except httpx.RequestError as exc:
            raise MnistDownloadError(f"Network error while fetching {url}: {exc}") from exc
        if response.status_code != 200:
            raise MnistDownloadError(f"Download of {url} failed (status {response.status_code})")

        path.write_bytes(response.content)
        logger.info("Downloaded %s (%d bytes)", path, len(response.content))
        paths.append(path)
    return paths
