from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core.errors import ConfigError, ContractError, DimensionError
from .core.tensor import (
    Tensor,
    concat,
    matmul,
    reshape,
    softmax,
    transpose,
)


@dataclass
class AttentionParams:
    """Per-head projections `W^Q_h`, `W^K_h`, `W^V_h`, each of shape `[d / H, d]`."""

    query: list[Tensor]
    key: list[Tensor]
    value: list[Tensor]

    def __post_init__(self) -> None:
        if not (len(self.query) == len(self.key) == len(self.value)) or not self.query:
            raise ConfigError("Attention needs the same positive number of Q, K and V heads.")

    @property
    def heads(self) -> int:
        return len(self.query)

    @property
    def dim(self) -> int:
        return int(self.query[0].shape[1])


def _mask_bias(mask: np.ndarray, length: int) -> Tensor:
    """Additive `-inf` bias on the logits of padded key positions, shaped `[S, W, W]`."""
    blocked = np.where(mask, 0.0, -np.inf)
    return Tensor.constant(np.repeat(blocked[:, None, :], length, axis=1))


def encode_batch(
    embeddings: Tensor, params: AttentionParams, mask: np.ndarray | None = None
) -> tuple[Tensor, list[Tensor]]:
    """Multi-head self-attention over a batch of padded sub-sequences.

    Each head projects the rows of every window, scores them with the scaled dot product and
    mixes the values with the attention weights; the head outputs are concatenated back to `d`
    columns. Padded key positions get zero weight. Rows at padded query positions are computed
    but carry no meaning.

    Args:
        embeddings: Context-aware embeddings `[S, W, d]`.
        params: Per-head projections.
        mask: Boolean `[S, W]`, True at real events. Defaults to all positions valid.

    Returns:
        The encoded embeddings `[S, W, d]` and the attention weights of each head `[S, W, W]`.
    """
    if embeddings.ndim != 3:
        raise DimensionError(f"encode_batch needs [S, W, d] embeddings, got {embeddings.shape}")
    count, length, dim = embeddings.shape
    if dim != params.dim:
        raise DimensionError(
            f"embeddings of width {dim} do not fit attention of width {params.dim}"
        )
    if dim % params.heads:
        raise ConfigError(f"d ({dim}) must be divisible by the number of heads ({params.heads}).")
    if length == 0:
        raise ContractError("Cannot encode an empty sub-sequence.")

    head_dim = dim // params.heads
    mask = np.ones((count, length), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any(axis=1).all():
        raise ContractError("Every sub-sequence needs at least one event.")
    bias = _mask_bias(mask, length)

    rows = reshape(embeddings, count * length, dim)
    outputs, weights = [], []
    for h in range(params.heads):
        q = reshape(matmul(rows, transpose(params.query[h])), count, length, head_dim)
        k = reshape(matmul(rows, transpose(params.key[h])), count, length, head_dim)
        v = reshape(matmul(rows, transpose(params.value[h])), count, length, head_dim)

        logits = matmul(q, transpose(k)) * (1.0 / np.sqrt(head_dim))
        alpha = softmax(logits + bias, axis=-1)
        weights.append(alpha)
        outputs.append(matmul(alpha, v))

    return concat(outputs, axis=-1), weights


def encode_subsequence(embeddings: Tensor, params: AttentionParams) -> Tensor:
    """Self-attention over the `[K, d]` context embeddings of one sub-sequence."""
    if embeddings.ndim != 2 or embeddings.shape[0] == 0:
        raise ContractError(f"Expected a non-empty [K, d] sub-sequence, got {embeddings.shape}")
    length, dim = embeddings.shape
    encoded, _ = encode_batch(reshape(embeddings, 1, length, dim), params)
    return reshape(encoded, length, dim)


__all__ = ["AttentionParams", "encode_batch", "encode_subsequence"]
