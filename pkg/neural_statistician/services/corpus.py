# neural_statistician/services/corpus.py
"""
In-memory set corpora.

A corpus is one DatasetBatch: a (n_sets, sample_size, n_features) array plus
optional per-set labels. Every set in a corpus has the same size; minibatches
are views of it by index.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any, Dict, Iterator, List, Optional, Sequence

import numpy as np

from neural_statistician.core.errors import StatisticianError


class CorpusError(StatisticianError):
    """Raised for inconsistent corpus shapes or labels."""


@dataclass
class SetLabel:
    family: Optional[str] = None
    mean: Optional[float] = None
    variance: Optional[float] = None
    class_id: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SetLabel":
        return cls(**{k: data.get(k) for k in ("family", "mean", "variance", "class_id")})

    @property
    def class_key(self) -> Optional[str]:
        """Class used by few-shot evaluation: the digit/class id, else the family."""
        if self.class_id is not None:
            return str(self.class_id)
        return self.family


@dataclass
class AffineMap:
    """Per-feature standardization y = (x - offset) / scale."""

    offset: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, points: np.ndarray) -> "AffineMap":
        arr = np.asarray(points, dtype=np.float64)
        flat = arr.reshape(-1, arr.shape[-1])
        scale = flat.std(axis=0)
        scale[scale == 0] = 1.0
        return cls(offset=flat.mean(axis=0), scale=scale)

    @classmethod
    def identity(cls, n_features: int) -> "AffineMap":
        return cls(offset=np.zeros(n_features), scale=np.ones(n_features))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.offset) / self.scale

    def invert(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y, dtype=np.float64) * self.scale + self.offset

    def to_dict(self) -> Dict[str, List[float]]:
        return {"offset": self.offset.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Sequence[float]]) -> "AffineMap":
        return cls(
            offset=np.asarray(data["offset"], dtype=np.float64),
            scale=np.asarray(data["scale"], dtype=np.float64),
        )


@dataclass
class DatasetBatch:
    values: np.ndarray
    labels: Optional[List[SetLabel]] = None
    set_ids: Optional[np.ndarray] = None
    affine: Optional[AffineMap] = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise CorpusError(
                f"Set tensor must have shape (n_sets, sample_size, n_features), got {self.values.shape}"
            )
        if self.set_ids is None:
            self.set_ids = np.arange(self.values.shape[0], dtype=np.int64)
        self.set_ids = np.asarray(self.set_ids, dtype=np.int64)
        if self.set_ids.shape != (self.values.shape[0],):
            raise CorpusError(f"{self.set_ids.shape[0]} set ids for {self.values.shape[0]} sets")
        if self.labels is not None and len(self.labels) != self.values.shape[0]:
            raise CorpusError(f"{len(self.labels)} labels for {self.values.shape[0]} sets")

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def sample_size(self) -> int:
        return self.values.shape[1]

    @property
    def n_features(self) -> int:
        return self.values.shape[2]

    def subset(self, indices: Sequence[int]) -> "DatasetBatch":
        idx = np.asarray(indices, dtype=np.int64)
        labels = [self.labels[i] for i in idx] if self.labels is not None else None
        return DatasetBatch(self.values[idx], labels, self.set_ids[idx], self.affine)

    def batches(self, batch_size: int, order: Optional[np.ndarray] = None) -> Iterator["DatasetBatch"]:
        """Consecutive batches in `order` (default: stored order); the last one may be short."""
        if batch_size < 1:
            raise CorpusError(f"batch_size must be >= 1, got {batch_size}")
        order = np.arange(len(self)) if order is None else np.asarray(order)
        for start in range(0, len(order), batch_size):
            yield self.subset(order[start : start + batch_size])

    def class_keys(self) -> List[Optional[str]]:
        if self.labels is None:
            raise CorpusError("Corpus has no labels")
        return [label.class_key for label in self.labels]
