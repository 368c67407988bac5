from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core.errors import ContractError, DimensionError
from .core.tensor import Tensor, gather_rows, matmul
from .core.utils import Array, IndexArray


@dataclass(frozen=True)
class TimeSlotMapper:
    """Maps timestamps to slot indices `τ(t) = floor((t - origin) / granularity)`."""

    granularity: int = 3600
    origin: int = 0

    def __call__(self, timestamp: int) -> int:
        return int(self.slots([timestamp])[0])

    def slots(self, timestamps: Sequence[int] | np.ndarray) -> np.ndarray:
        stamps = np.asarray(timestamps, dtype=np.int64)
        if stamps.size and stamps.min() < self.origin:
            raise ContractError(
                f"timestamp {int(stamps.min())} precedes the time origin {self.origin}"
            )
        return (stamps - self.origin) // self.granularity


def base_time_encoding(slots: int | IndexArray, dim: int) -> Array:
    """Sinusoidal encoding of slot indices into `2 * dim` values scaled by `1 / sqrt(dim)`.

    Entry `2l` is `sin(τ / 10000^(2l/d))` and entry `2l + 1` is `cos(τ / 10000^((2l+1)/d))`, for
    `l = 0 .. d-1`. The exponents divide by `d` even though the vector has `2d` entries.

    Example:
    ```
    >>> base_time_encoding(0, 4)
    array([0. , 0.5, 0. , 0.5, 0. , 0.5, 0. , 0.5])
    ```
    """
    tau = np.asarray(slots, dtype=np.float64)
    l = np.arange(dim, dtype=np.float64)
    even = np.sin(tau[..., None] / 10000.0 ** (2.0 * l / dim))
    odd = np.cos(tau[..., None] / 10000.0 ** ((2.0 * l + 1.0) / dim))

    encoding = np.empty((*tau.shape, 2 * dim))
    encoding[..., 0::2] = even
    encoding[..., 1::2] = odd
    return encoding / np.sqrt(dim)  # type: ignore[no-any-return]


def temporal_projection(t_base: Array | Tensor, projection: Tensor) -> Tensor:
    """Learned projection `e_t = t_base · W^t` of base encodings `[n, 2d]` into `[n, d]`."""
    base = t_base if isinstance(t_base, Tensor) else Tensor.constant(t_base)
    if base.ndim == 1:
        base = Tensor.constant(base.values.reshape(1, -1))
    if base.shape[-1] != projection.shape[0]:
        raise DimensionError(
            f"time encoding of shape {base.shape} does not fit projection {projection.shape}"
        )
    return matmul(base, projection)


@dataclass
class EmbeddingTables:
    """Id embeddings of items and behaviors and the time projection.

    Attributes:
        item: Item table `[J, d]`.
        behavior: Behavior table `[B, d]`.
        time: Projection `W^t` of shape `[2d, d]`; absent when the context is switched off.
        position: Position-in-window table `[W, d]`; only present when the behavior and time
            context is switched off.
    """

    item: Tensor
    behavior: Tensor | None = None
    time: Tensor | None = None
    position: Tensor | None = None

    @property
    def dim(self) -> int:
        return int(self.item.shape[1])


def context_embed(
    items: IndexArray,
    behaviors: IndexArray,
    slots: IndexArray,
    tables: EmbeddingTables,
    positions: IndexArray | None = None,
    context_off: bool = False,
) -> Tensor:
    """Context-aware item embeddings `E = e_v ⊕ e_b ⊕ e_t`, one row per event.

    With `context_off`, the behavior and time terms are dropped and the position embedding of each
    event within its window is added instead.

    Raises:
        IndexError: For item, behavior or position ids outside their tables.
    """
    embedded = gather_rows(tables.item, items)

    if context_off:
        if tables.position is None or positions is None:
            raise ContractError("positional embeddings are required when the context is off")
        return embedded + gather_rows(tables.position, positions)

    if tables.behavior is None or tables.time is None:
        raise ContractError("behavior and time embeddings are required for the event context")
    encoding = base_time_encoding(np.asarray(slots).reshape(-1), tables.dim)
    return (
        embedded
        + gather_rows(tables.behavior, behaviors)
        + temporal_projection(encoding, tables.time)
    )


__all__ = [
    "EmbeddingTables",
    "TimeSlotMapper",
    "base_time_encoding",
    "context_embed",
    "temporal_projection",
]
