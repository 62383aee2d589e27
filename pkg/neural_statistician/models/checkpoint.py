# neural_statistician/models/checkpoint.py
"""
NSTM model checkpoints.

Layout (version 1, every integer a little-endian u32):

    "NSTM" | version | config_len | config JSON (UTF-8, config_len bytes)
    | param_count
    | per parameter: name_len | name (UTF-8) | rank | extent_1 .. extent_rank
                     | float64 little-endian values, row-major

Parameters are written in model order; loading matches them by name.
"""

from __future__ import annotations

import logging
import struct
from pathlib import Path
from typing import BinaryIO, Dict, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from neural_statistician.core.errors import StatisticianError
from neural_statistician.models.schemas import ModelConfig
from neural_statistician.models.statistician import NeuralStatistician

logger = logging.getLogger(__name__)

MAGIC = b"NSTM"
VERSION = 1
_U32 = struct.Struct("<I")


class CheckpointError(StatisticianError):
    """Raised for unreadable, truncated or mismatched checkpoint files."""

    def __init__(self, message: str, offset: Optional[int] = None) -> None:
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)


def _u32(value: int) -> bytes:
    return _U32.pack(value)


def save_checkpoint(path: Union[str, Path], model: NeuralStatistician) -> Path:
    """Write every named parameter of `model` with its config to `path`."""
    path = Path(path)
    config_bytes = model.config.model_dump_json().encode("utf-8")
    params = model.parameters()

    chunks = [MAGIC, _u32(VERSION), _u32(len(config_bytes)), config_bytes, _u32(len(params))]
    for p in params:
        name = p.name.encode("utf-8")
        data = np.ascontiguousarray(p.value.data, dtype="<f8")
        chunks += [_u32(len(name)), name, _u32(data.ndim)]
        chunks += [_u32(extent) for extent in data.shape]
        chunks.append(data.tobytes())

    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        path.write_bytes(b"".join(chunks))
    except OSError as e:
        raise CheckpointError(f"Cannot write checkpoint {path}: {e}") from e
    logger.info("Saved checkpoint with %d parameters to %s", len(params), path)
    return path


class _Reader:
    def __init__(self, fh: BinaryIO, size: int) -> None:
        self.fh = fh
        self.size = size
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        data = self.fh.read(min(n, self.size - self.offset))
        if len(data) != n:
            raise CheckpointError(
                f"Truncated checkpoint while reading {what}: expected {n} bytes, got {len(data)}",
                offset=self.offset,
            )
        self.offset += n
        return data

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]


def read_checkpoint(path: Union[str, Path]) -> Tuple[ModelConfig, Dict[str, np.ndarray]]:
    """Parse a checkpoint into its config and a name -> array mapping."""
    path = Path(path)
    try:
        fh = path.open("rb")
    except OSError as e:
        raise CheckpointError(f"Cannot open checkpoint {path}: {e}") from e

    with fh:
        reader = _Reader(fh, path.stat().st_size)
        magic = reader.take(4, "magic")
        if magic != MAGIC:
            raise CheckpointError(f"Bad magic {magic!r}, expected {MAGIC!r}", offset=0)
        version = reader.u32("version")
        if version != VERSION:
            raise CheckpointError(f"Unsupported checkpoint version {version}", offset=4)

        config_len = reader.u32("config length")
        raw_config = reader.take(config_len, "config")
        try:
            config = ModelConfig.model_validate_json(raw_config)
        except ValidationError as e:
            raise CheckpointError(f"Invalid model config in checkpoint: {e}", offset=12) from e

        arrays: Dict[str, np.ndarray] = {}
        for _ in range(reader.u32("parameter count")):
            name = reader.take(reader.u32("name length"), "parameter name").decode("utf-8", errors="replace")
            rank = reader.u32(f"{name} rank")
            shape = tuple(reader.u32(f"{name} extent") for _ in range(rank))
            count = int(np.prod(shape, dtype=np.int64))
            values = np.frombuffer(reader.take(8 * count, f"{name} values"), dtype="<f8")
            arrays[name] = values.reshape(shape).astype(np.float64)

        if fh.read(1):
            raise CheckpointError("Trailing bytes after last parameter", offset=reader.offset)
    return config, arrays


def load_checkpoint(path: Union[str, Path]) -> NeuralStatistician:
    """Rebuild the model described by a checkpoint and restore its parameters."""
    config, arrays = read_checkpoint(path)
    model = NeuralStatistician(config)
    expected = model.named_parameters()

    missing = sorted(set(expected) - set(arrays))
    unknown = sorted(set(arrays) - set(expected))
    if missing or unknown:
        raise CheckpointError(
            f"Checkpoint parameters do not match the model: missing={missing}, unknown={unknown}"
        )
    for name, param in expected.items():
        if arrays[name].shape != param.shape:
            raise CheckpointError(
                f"{name}: checkpoint shape {arrays[name].shape} != model shape {param.shape}"
            )
        param.assign(arrays[name])
    logger.debug("Loaded %d parameters from %s", len(expected), path)
    return model
