from __future__ import annotations

import logging

import numpy as np

from .config import AblationConfig, DataConfig, ModelConfig, TimeConfig
from .core.errors import ContractError
from .core.gradcheck import finite_difference_check
from .core.rng import component_rng
from .core.tensor import Tensor, reduce_sum, reshape
from .data import BehaviorVocabulary, InteractionRecord, Interactions, TrainingInstance
from .dataset import Dataset, prepare_dataset
from .model import ModelSizes, TemporalGraphTransformer
from .propagation import combine_layers, propagate_layers
from .temporal import base_time_encoding, context_embed, temporal_projection
from .training import instance_loss
from .transformer import encode_batch

logger = logging.getLogger(__name__)


TOY_START = 472_222 * 3600


def toy_dataset(seed: int = 0, users: int = 3, items: int = 8, window: int = 3) -> Dataset:
    """Users with two sub-sequences each over two behaviors and a small catalog.

    Time slots count hours since the Unix epoch from `TOY_START` on, where no entry of the base time
    encoding is close to zero and every row of the time projection gets a gradient well above
    finite-difference round-off.
    """
    rng = component_rng(seed, "synthetic")
    records = []
    for user in range(users):
        stamps = TOY_START + np.cumsum(rng.integers(1, 4, size=2 * window)) * 3600
        behaviors = rng.integers(0, 2, size=2 * window)
        behaviors[window - 1] = 1
        for k, stamp in enumerate(stamps):
            item = int(rng.integers(items))
            records.append(InteractionRecord(user, item, int(behaviors[k]), int(stamp)))
        # Held out at evaluation, leaving exactly two windows for training.
        last = int(stamps[-1]) + 3600
        records.append(InteractionRecord(user, int(rng.integers(items)), 1, last))

    interactions = Interactions(
        records, [str(u) for u in range(users)], [str(j) for j in range(items)]
    )
    vocabulary = BehaviorVocabulary(("view", "buy"))
    return prepare_dataset(
        interactions,
        vocabulary,
        DataConfig(window=window, target_behavior="buy"),
        TimeConfig(origin=0),
    )


def toy_instances(dataset: Dataset, seed: int = 0) -> list[TrainingInstance]:
    """One positive and one different negative item per sub-user."""
    rng = component_rng(seed, "negatives")
    instances = []
    for sub in dataset.subsequences:
        positive, negative = rng.choice(dataset.num_items, size=2, replace=False)
        instances.append(
            TrainingInstance(sub.user, sub.ordinal, sub.subuser, int(positive), (int(negative),))
        )
    return instances


def gradient_sweep(dim: int = 8, seed: int = 0, eps: float = 1e-5) -> dict[str, float]:
    """Finite-difference check of each stage of the model on the toy dataset.

    Returns:
        The maximum relative gradient error for `temporal`, `transformer`, `propagation` and the
        full `model` loss.
    """
    dataset = toy_dataset(seed)
    graph = dataset.graph()
    config = ModelConfig(dim=dim, layers=2, attention_heads=2, channels=2)
    sizes = ModelSizes(dataset.num_users, dataset.num_items, len(dataset.vocabulary), 3)
    model = TemporalGraphTransformer.create(
        sizes, config, AblationConfig(), component_rng(seed, "init")
    )
    params = model.params
    tables = params.tables()
    attention = params.attention()
    if attention is None or tables.time is None:
        raise ContractError("The gradient sweep needs the full model.")
    encoder, time_projection = attention, tables.time
    count, window = graph.items.shape

    sampler = np.random.default_rng(seed)
    event_weights = Tensor.constant(sampler.normal(size=(count * window, dim)))
    encoded_weights = Tensor.constant(sampler.normal(size=(count, window, dim)))
    fixed_events = Tensor.constant(sampler.normal(size=(count, window, dim)))
    output_weights = [
        Tensor.constant(sampler.normal(size=shape))
        for shape in ((dataset.num_users, dim), (count, dim), (dataset.num_items, dim))
    ]

    def events() -> Tensor:
        return context_embed(
            graph.items.ravel(), graph.behaviors.ravel(), graph.slots.ravel(), tables
        )

    def temporal_loss() -> Tensor:
        return reduce_sum(events() * event_weights)

    def transformer_loss() -> Tensor:
        encoded, _ = encode_batch(reshape(events(), count, window, dim), encoder, graph.mask)
        return reduce_sum(encoded * encoded_weights)

    def propagation_loss() -> Tensor:
        temporal = temporal_projection(base_time_encoding(graph.last_slots, dim), time_projection)
        state = propagate_layers(
            graph,
            fixed_events,
            tables.item,
            params["embedding.user"],
            temporal,
            params.message_passing(),
            model.transforms(graph.num_behaviors),
            model.options,
        )
        total = Tensor.constant(0.0)
        for output, weight in zip(combine_layers(state), output_weights):
            total = total + reduce_sum(output * weight)
        return total

    instances = toy_instances(dataset, seed)

    def model_loss() -> Tensor:
        return instance_loss(model, graph, instances, 0.01)

    stage_params = {
        "temporal": ["embedding.item", "embedding.behavior", "embedding.time"],
        "transformer": [name for name in params if name.startswith("attention.")],
        "propagation": [
            "embedding.item",
            "embedding.user",
            "embedding.time",
            "embedding.behavior",
            "channel.bases",
            "channel.gate",
            "channel.bias",
            "aggregation.weight",
            "aggregation.bias",
        ],
        "model": list(params),
    }
    losses = {
        "temporal": temporal_loss,
        "transformer": transformer_loss,
        "propagation": propagation_loss,
        "model": model_loss,
    }

    errors = {}
    for stage, loss in losses.items():
        selected = {name: params[name] for name in stage_params[stage]}
        errors[stage] = finite_difference_check(loss, selected, eps)
        logger.info("gradient check %s: max relative error %.3e", stage, errors[stage])
    return errors


__all__ = ["TOY_START", "gradient_sweep", "toy_dataset", "toy_instances"]
