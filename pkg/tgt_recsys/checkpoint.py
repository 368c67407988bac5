"""Binary checkpoints of model parameters and optimizer state.

Layout, all integers unsigned 32-bit little-endian and all values 64-bit little-endian floats:

```
b"TGT1" count { name_length name rank dims... values... } * count
[ b"OPT1" count { ...same record scheme... } * count ]
```

The optimizer section stores the moments as `first/<name>` and `second/<name>` plus scalar records
`meta/<field>` for the step, epoch, learning rate, decay and Adam constants.
"""

from __future__ import annotations

import logging
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .core.errors import CheckpointCorruptionError, CheckpointFormatError, DataError
from .model import ModelParameters
from .training import OptimizerState

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"TGT1"
OPTIMIZER_MAGIC = b"OPT1"

_META_FIELDS = ("learning_rate", "decay", "beta1", "beta2", "eps", "step", "epoch")


def _encode_section(magic: bytes, arrays: Mapping[str, np.ndarray]) -> bytes:
    chunks = [magic, struct.pack("<I", len(arrays))]
    for name, values in arrays.items():
        encoded = name.encode("utf-8")
        array = np.asarray(values, dtype="<f8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape))
        chunks.append(np.ascontiguousarray(array).tobytes())
    return b"".join(chunks)


def encode_checkpoint(params: ModelParameters, optimizer: OptimizerState | None = None) -> bytes:
    payload = _encode_section(MODEL_MAGIC, params.arrays())
    if optimizer is None:
        return payload

    arrays: dict[str, np.ndarray] = {
        f"meta/{name}": np.array(float(getattr(optimizer, name))) for name in _META_FIELDS
    }
    arrays.update({f"first/{name}": m for name, m in optimizer.first.items()})
    arrays.update({f"second/{name}": v for name, v in optimizer.second.items()})
    return payload + _encode_section(OPTIMIZER_MAGIC, arrays)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.offset = 0

    @property
    def exhausted(self) -> bool:
        return self.offset >= len(self.data)

    def take(self, size: int, what: str) -> bytes:
        end = self.offset + size
        if end > len(self.data):
            raise CheckpointCorruptionError(self.offset, f"truncated while reading {what}")
        chunk = self.data[self.offset : end]
        self.offset = end
        return chunk

    def u32(self, what: str) -> int:
        return int(struct.unpack("<I", self.take(4, what))[0])

    def section(self) -> dict[str, np.ndarray]:
        arrays: dict[str, np.ndarray] = {}
        for _ in range(self.u32("record count")):
            start = self.offset
            try:
                name = self.take(self.u32("name length"), "name").decode("utf-8")
            except UnicodeDecodeError as error:
                raise CheckpointCorruptionError(start, "parameter name is not UTF-8") from error
            rank = self.u32(f"rank of '{name}'")
            shape = tuple(self.u32(f"shape of '{name}'") for _ in range(rank))
            size = int(np.prod(shape, dtype=np.int64))
            raw = self.take(8 * size, f"values of '{name}'")
            arrays[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
        return arrays


def decode_checkpoint(data: bytes) -> tuple[ModelParameters, OptimizerState | None]:
    """Parse checkpoint bytes; nothing is returned unless the whole payload is valid.

    Raises:
        CheckpointFormatError: If a section does not start with its magic bytes.
        CheckpointCorruptionError: If the payload ends early, with the byte offset.
    """
    if data[:4] != MODEL_MAGIC:
        raise CheckpointFormatError(f"Not a checkpoint: expected magic {MODEL_MAGIC!r}.")
    reader = _Reader(data)
    reader.take(4, "magic")
    params = ModelParameters.from_arrays(reader.section())

    if reader.exhausted:
        return params, None

    start = reader.offset
    if reader.take(4, "optimizer magic") != OPTIMIZER_MAGIC:
        raise CheckpointFormatError(
            f"Unexpected bytes at offset {start}: expected magic {OPTIMIZER_MAGIC!r}."
        )
    records = reader.section()
    if not reader.exhausted:
        raise CheckpointCorruptionError(reader.offset, "trailing bytes after optimizer state")

    state = OptimizerState(
        first={k.split("/", 1)[1]: v for k, v in records.items() if k.startswith("first/")},
        second={k.split("/", 1)[1]: v for k, v in records.items() if k.startswith("second/")},
    )
    for name in _META_FIELDS:
        key = f"meta/{name}"
        if key not in records:
            raise CheckpointFormatError(f"Optimizer state lacks '{key}'.")
        value = float(records[key])
        setattr(state, name, int(value) if name in ("step", "epoch") else value)
    return params, state


def save_checkpoint(
    path: str | Path, params: ModelParameters, optimizer: OptimizerState | None = None
) -> None:
    Path(path).write_bytes(encode_checkpoint(params, optimizer))
    logger.info("saved checkpoint with %d parameters to %s", len(params), path)


def load_checkpoint(path: str | Path) -> tuple[ModelParameters, OptimizerState | None]:
    try:
        data = Path(path).read_bytes()
    except OSError as error:
        raise DataError(f"Cannot read checkpoint {path}: {error.strerror}.") from error
    params, state = decode_checkpoint(data)
    logger.info("loaded checkpoint with %d parameters from %s", len(params), path)
    return params, state


__all__ = [
    "decode_checkpoint",
    "encode_checkpoint",
    "load_checkpoint",
    "save_checkpoint",
]
