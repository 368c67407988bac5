from __future__ import annotations

import numpy as np
import pytest

from tgt_recsys.core import ConfigError, ContractError, DimensionError, Tensor
from tgt_recsys.transformer import AttentionParams, encode_batch, encode_subsequence

from . import reference


def _params(rng: np.random.Generator, dim: int = 4, heads: int = 2) -> AttentionParams:
    head_dim = dim // heads

    def draw(kind: str) -> list[Tensor]:
        return [Tensor.leaf(rng.normal(size=(head_dim, dim)), f"{kind}{h}") for h in range(heads)]

    return AttentionParams(draw("q"), draw("k"), draw("v"))


def _arrays(tensors: list[Tensor]) -> list[np.ndarray]:
    return [t.values for t in tensors]


@pytest.mark.parametrize("seed", range(20))
def test_matches_reference(seed: int) -> None:
    rng = np.random.default_rng(seed)
    params = _params(rng)
    events = rng.normal(size=(3, 4))

    encoded = encode_subsequence(Tensor.constant(events), params)
    expected = reference.attention(
        events, _arrays(params.query), _arrays(params.key), _arrays(params.value)
    )
    assert np.allclose(encoded.values, expected, rtol=0.0, atol=1e-12)


def test_single_event() -> None:
    rng = np.random.default_rng(0)
    params = _params(rng)
    events = rng.normal(size=(1, 4))

    encoded, weights = encode_batch(Tensor.constant(events[None]), params)
    expected = np.concatenate([v.values @ events[0] for v in params.value])
    assert np.allclose(encoded.values[0, 0], expected)
    assert all(w.values[0, 0, 0] == 1.0 for w in weights)


def test_identical_rows_share_attention() -> None:
    rng = np.random.default_rng(1)
    row = rng.normal(size=4)
    encoded, weights = encode_batch(Tensor.constant(np.stack([row, row])[None]), _params(rng))
    for w in weights:
        assert np.allclose(w.values, 0.5)
    assert np.allclose(encoded.values[0, 0], encoded.values[0, 1])


def test_rows_sum_to_one_and_padding_is_ignored() -> None:
    rng = np.random.default_rng(2)
    params = _params(rng, dim=6, heads=3)
    events = rng.normal(size=(2, 4, 6))
    mask = np.array([[True, True, True, True], [True, True, False, False]])

    encoded, weights = encode_batch(Tensor.constant(events), params, mask)
    for w in weights:
        assert np.allclose(w.values.sum(axis=-1), 1.0, atol=1e-9)
        assert np.all(w.values[1, :, 2:] == 0.0)

    short = encode_subsequence(Tensor.constant(events[1, :2]), params)
    assert np.allclose(encoded.values[1, :2], short.values)


@pytest.mark.parametrize("seed", range(100))
def test_attention_rows_are_distributions(seed: int) -> None:
    rng = np.random.default_rng(seed)
    heads = int(rng.integers(1, 4))
    dim = heads * int(rng.integers(1, 4))
    count, window = int(rng.integers(1, 4)), int(rng.integers(1, 6))
    lengths = rng.integers(1, window + 1, size=count)
    mask = np.arange(window)[None, :] < lengths[:, None]
    events = rng.normal(size=(count, window, dim))

    _, weights = encode_batch(Tensor.constant(events), _params(rng, dim, heads), mask)
    assert len(weights) == heads
    for w in weights:
        assert np.allclose(w.values.sum(axis=-1), 1.0, atol=1e-9)
        assert np.all(w.values >= 0.0)
        assert np.all(w.values[~np.broadcast_to(mask[:, None, :], w.values.shape)] == 0.0)


def test_permutation_equivariance() -> None:
    rng = np.random.default_rng(3)
    params = _params(rng)
    events = rng.normal(size=(4, 4))
    order = np.array([2, 0, 3, 1])

    encoded = encode_subsequence(Tensor.constant(events), params).values
    permuted = encode_subsequence(Tensor.constant(events[order]), params).values
    assert np.allclose(permuted, encoded[order])


def test_errors() -> None:
    rng = np.random.default_rng(4)
    with pytest.raises(ContractError):
        encode_subsequence(Tensor.zeros(0, 4), _params(rng))

    with pytest.raises(DimensionError):
        encode_subsequence(Tensor.zeros(3, 6), _params(rng))

    uneven = AttentionParams(
        [Tensor.zeros(1, 4)] * 3, [Tensor.zeros(1, 4)] * 3, [Tensor.zeros(1, 4)] * 3
    )
    with pytest.raises(ConfigError, match="divisible"):
        encode_subsequence(Tensor.zeros(2, 4), uneven)

    with pytest.raises(ContractError):
        encode_batch(Tensor.zeros(1, 2, 4), _params(rng), np.array([[False, False]]))

    with pytest.raises(ConfigError):
        AttentionParams([], [], [])
