from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from tgt_recsys.config import AblationConfig, ModelConfig
from tgt_recsys.core import ContractError, component_rng
from tgt_recsys.dataset import Dataset
from tgt_recsys.model import (
    ModelParameters,
    ModelSizes,
    TemporalGraphTransformer,
    apply_ablation,
    parameter_shapes,
)

VARIANTS = {
    "ce": AblationConfig(context_embedding_off=True),
    "sd": AblationConfig(sequence_encoder_off=True),
    "mcp": AblationConfig(multi_channel_off=True),
    "lbd": AblationConfig(global_context_off=True),
    "cta": AblationConfig(concat_aggregation=True),
    "fba": AblationConfig(frequency_aggregation=True),
}


def test_parameter_shapes(toy_sizes: ModelSizes, small_model_config: ModelConfig) -> None:
    shapes = parameter_shapes(toy_sizes, small_model_config, AblationConfig())
    assert list(shapes)[0] == "embedding.item"
    assert shapes["embedding.item"] == (8, 8)
    assert shapes["embedding.behavior"] == (2, 8)
    assert shapes["embedding.time"] == (16, 8)
    assert shapes["embedding.user"] == (3, 8)
    assert shapes["attention.query.1"] == (4, 8)
    assert shapes["channel.bases"] == (2, 8, 8)
    assert shapes["channel.gate"] == (2, 8)
    assert shapes["aggregation.weight"] == (8, 8)
    assert shapes["score"] == (8,)


@pytest.mark.parametrize(
    "variant, present, absent",
    [
        ("ce", ["embedding.position"], ["embedding.time"]),
        ("sd", [], ["attention.query.0"]),
        ("mcp", ["channel.shared"], ["channel.bases", "channel.gate", "channel.bias"]),
        ("lbd", [], []),
        ("cta", ["aggregation.concat"], ["aggregation.weight", "aggregation.bias"]),
        ("fba", [], ["aggregation.weight", "aggregation.bias"]),
    ],
)
def test_variant_shapes(
    toy_sizes: ModelSizes,
    small_model_config: ModelConfig,
    variant: str,
    present: list[str],
    absent: list[str],
) -> None:
    shapes = parameter_shapes(toy_sizes, small_model_config, VARIANTS[variant])
    assert all(name in shapes for name in present)
    assert all(name not in shapes for name in absent)
    if variant == "cta":
        assert shapes["aggregation.concat"] == (16, 8)


def test_initialization_is_bounded_and_seeded(
    toy_sizes: ModelSizes, small_model_config: ModelConfig
) -> None:
    first = ModelParameters.initialize(
        toy_sizes, small_model_config, AblationConfig(), component_rng(5, "init")
    )
    second = ModelParameters.initialize(
        toy_sizes, small_model_config, AblationConfig(), component_rng(5, "init")
    )
    bound = 1.0 / np.sqrt(8)
    for name in first:
        assert np.all(np.abs(first[name].values) <= bound)
        assert np.array_equal(first[name].values, second[name].values)
        assert first[name].name == name


def test_forward_shapes(toy: Dataset, toy_model: TemporalGraphTransformer) -> None:
    graph = toy.graph()
    reps = toy_model(graph)
    assert reps.users.shape == (3, 8)
    assert reps.subusers.shape == (graph.size, 8)
    assert reps.items.shape == (8, 8)
    assert reps.state.layers == 2
    assert all(np.all(np.isfinite(t.values)) for t in (reps.users, reps.subusers, reps.items))


def test_all_flags_off_is_the_default_model(
    toy: Dataset, toy_model: TemporalGraphTransformer
) -> None:
    variant = apply_ablation(AblationConfig(), toy_model)
    assert list(variant.params) == list(toy_model.params)
    graph = toy.graph()
    assert np.array_equal(variant(graph).subusers.values, toy_model(graph).subusers.values)


@pytest.mark.parametrize("variant", sorted(VARIANTS))
def test_every_variant_runs(
    toy: Dataset, toy_model: TemporalGraphTransformer, variant: str
) -> None:
    ablated = apply_ablation(VARIANTS[variant], toy_model, component_rng(0, "init"))
    reps = ablated(toy.graph())
    assert np.all(np.isfinite(reps.subusers.values))
    assert np.all(np.isfinite(reps.items.values))

    shared = set(ablated.params) & set(toy_model.params)
    assert all(ablated.params[name] is toy_model.params[name] for name in shared)


def test_frequency_variant_weights(toy: Dataset, toy_model: TemporalGraphTransformer) -> None:
    graph = toy.graph()
    reps = apply_ablation(VARIANTS["fba"], toy_model)(graph)
    counts = graph.subsequence_counts
    expected = counts / counts.sum(axis=1, keepdims=True)
    for gamma in reps.state.behavior_weights:
        assert np.allclose(gamma, expected)


def test_without_global_context_users_keep_their_embedding(
    toy: Dataset, toy_model: TemporalGraphTransformer
) -> None:
    model = apply_ablation(VARIANTS["lbd"], toy_model)
    reps = model(toy.graph())
    users = toy_model.params["embedding.user"].values
    assert np.allclose(reps.users.values, 3.0 * users)


def test_context_off_ignores_timestamps(toy: Dataset, toy_model: TemporalGraphTransformer) -> None:
    model = apply_ablation(VARIANTS["ce"], toy_model, component_rng(1, "init"))
    graph = toy.graph()
    shifted = replace(graph, slots=graph.slots + 100, last_slots=graph.last_slots + 100)
    assert np.array_equal(model(graph).subusers.values, model(shifted).subusers.values)


def test_literal_eta_warns(toy_sizes: ModelSizes) -> None:
    with pytest.warns(RuntimeWarning, match="Unnormalized"):
        TemporalGraphTransformer.create(toy_sizes, ModelConfig(dim=8, eta_mode="literal"))


def test_variant_needs_sizes(toy_model: TemporalGraphTransformer) -> None:
    bare = TemporalGraphTransformer(toy_model.params, toy_model.config)
    with pytest.raises(ContractError):
        apply_ablation(VARIANTS["sd"], bare)
