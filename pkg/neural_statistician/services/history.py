# neural_statistician/services/history.py

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Union

from neural_statistician.services.storage import write_csv

TRAIN_LOG_COLUMNS = ["epoch", "loss", "r_d", "c_d", "l_d", "seconds"]


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    r_d: float
    c_d: float
    l_d: float
    seconds: float


class TrainLog:
    """Append-only per-epoch training history."""

    def __init__(self) -> None:
        self._records: List[EpochRecord] = []

    def append(self, record: EpochRecord) -> None:
        """
        Record one completed epoch.

        Epochs must arrive in order, one record each.
        """
        expected = len(self._records) + 1
        if record.epoch != expected:
            raise ValueError(f"expected a record for epoch {expected}, got {record.epoch}")
        self._records.append(record)

    @property
    def records(self) -> List[EpochRecord]:
        return list(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def last(self) -> Optional[EpochRecord]:
        return self._records[-1] if self._records else None

    def to_dicts(self) -> List[Dict[str, float]]:
        return [asdict(r) for r in self._records]

    def save_csv(self, path: Union[str, Path]) -> Path:
        rows = ([getattr(r, f.name) for f in fields(EpochRecord)] for r in self._records)
        write_csv(path, TRAIN_LOG_COLUMNS, rows)
        return Path(path)
