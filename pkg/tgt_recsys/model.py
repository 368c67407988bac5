from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from .config import AblationConfig, ModelConfig
from .core.errors import ContractError
from .core.tensor import Tensor, reshape
from .propagation import (
    InteractionGraph,
    LayerState,
    MessagePassingParams,
    PropagationOptions,
    channel_projection,
    combine_layers,
    propagate_layers,
)
from .temporal import EmbeddingTables, base_time_encoding, context_embed, temporal_projection
from .transformer import AttentionParams, encode_batch

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelSizes:
    """Table sizes fixed by the data: users U, items J, behaviors B and the window W."""

    users: int
    items: int
    behaviors: int
    window: int


def parameter_shapes(
    sizes: ModelSizes, config: ModelConfig, ablation: AblationConfig
) -> dict[str, tuple[int, ...]]:
    """Name and shape of every trainable parameter of a model variant, in a stable order."""
    d = config.dim
    shapes: dict[str, tuple[int, ...]] = {"embedding.item": (sizes.items, d)}

    if not ablation.context_embedding_off or not ablation.multi_channel_off:
        shapes["embedding.behavior"] = (sizes.behaviors, d)
    if ablation.context_embedding_off:
        shapes["embedding.position"] = (sizes.window, d)
    else:
        shapes["embedding.time"] = (2 * d, d)
    shapes["embedding.user"] = (sizes.users, d)

    if not ablation.sequence_encoder_off:
        head_dim = d // config.attention_heads
        for kind in ("query", "key", "value"):
            for h in range(config.attention_heads):
                shapes[f"attention.{kind}.{h}"] = (head_dim, d)

    if ablation.multi_channel_off:
        shapes["channel.shared"] = (d, d)
    else:
        shapes["channel.bases"] = (config.channels, d, d)
        shapes["channel.gate"] = (config.channels, d)
        shapes["channel.bias"] = (config.channels,)

    if ablation.concat_aggregation:
        shapes["aggregation.concat"] = (sizes.behaviors * d, d)
    elif not ablation.frequency_aggregation:
        shapes["aggregation.weight"] = (d, d)
        shapes["aggregation.bias"] = (d,)

    shapes["score"] = (d,)
    return shapes


class ModelParameters(Mapping[str, Tensor]):
    """Every trainable leaf of the model, keyed by name in a stable order.

    The order is the one of `parameter_shapes`; it fixes the layout of checkpoints and the sweep
    order of gradient checks.
    """

    def __init__(self, tensors: Mapping[str, Tensor]) -> None:
        self._tensors = dict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def __repr__(self) -> str:
        return f"ModelParameters({', '.join(self._tensors)})"

    @classmethod
    def initialize(
        cls,
        sizes: ModelSizes,
        config: ModelConfig,
        ablation: AblationConfig,
        rng: np.random.Generator,
    ) -> ModelParameters:
        """Draw every parameter uniformly from `[-1/sqrt(d), 1/sqrt(d)]`."""
        bound = 1.0 / np.sqrt(config.dim)
        return cls(
            {
                name: Tensor.leaf(rng.uniform(-bound, bound, size=shape), name)
                for name, shape in parameter_shapes(sizes, config, ablation).items()
            }
        )

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> ModelParameters:
        return cls({name: Tensor.leaf(values, name) for name, values in arrays.items()})

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: tensor.values.copy() for name, tensor in self._tensors.items()}

    def zero_grad(self) -> None:
        for tensor in self._tensors.values():
            tensor.zero_grad()

    @property
    def dim(self) -> int:
        return int(self["score"].shape[0])

    def tables(self) -> EmbeddingTables:
        return EmbeddingTables(
            item=self["embedding.item"],
            behavior=self.get("embedding.behavior"),
            time=self.get("embedding.time"),
            position=self.get("embedding.position"),
        )

    def attention(self) -> AttentionParams | None:
        heads = sum(1 for name in self if name.startswith("attention.query."))
        if heads == 0:
            return None
        return AttentionParams(
            query=[self[f"attention.query.{h}"] for h in range(heads)],
            key=[self[f"attention.key.{h}"] for h in range(heads)],
            value=[self[f"attention.value.{h}"] for h in range(heads)],
        )

    def message_passing(self) -> MessagePassingParams:
        return MessagePassingParams(
            bases=self.get("channel.bases"),
            gate=self.get("channel.gate"),
            gate_bias=self.get("channel.bias"),
            shared=self.get("channel.shared"),
            attention_weight=self.get("aggregation.weight"),
            attention_bias=self.get("aggregation.bias"),
            concat_weight=self.get("aggregation.concat"),
        )


@dataclass
class Representations:
    """Final embeddings of one forward pass.

    Attributes:
        users: Combined user embeddings `[U, d]`.
        subusers: Combined embeddings of the graph's sub-users `[S, d]`, in graph order.
        items: Combined item embeddings `[J, d]`.
        graph: The graph the pass ran over.
        state: Per-layer embeddings and attention diagnostics.
    """

    users: Tensor
    subusers: Tensor
    items: Tensor
    graph: InteractionGraph
    state: LayerState


class TemporalGraphTransformer:
    """Temporal graph transformer over users, their sub-sequences and items.

    One forward pass embeds every event with its behavior and time context, encodes each
    sub-sequence with self-attention, then propagates messages between items, sub-users and users
    for `config.layers` layers and sums the layers.
    """

    def __init__(
        self,
        params: ModelParameters,
        config: ModelConfig,
        ablation: AblationConfig | None = None,
        sizes: ModelSizes | None = None,
    ) -> None:
        self.params = params
        self.config = config
        self.ablation = ablation or AblationConfig()
        self.sizes = sizes

        if config.eta_mode == "literal":
            warnings.warn(
                "Unnormalized sub-sequence weights grow with the number of sub-sequences per user.",
                RuntimeWarning,
                stacklevel=2,
            )

    @classmethod
    def create(
        cls,
        sizes: ModelSizes,
        config: ModelConfig,
        ablation: AblationConfig | None = None,
        rng: np.random.Generator | None = None,
    ) -> TemporalGraphTransformer:
        ablation = ablation or AblationConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        params = ModelParameters.initialize(sizes, config, ablation, rng)
        return cls(params, config, ablation, sizes)

    @property
    def options(self) -> PropagationOptions:
        ablation = self.ablation
        if ablation.concat_aggregation:
            aggregation = "concat"
        elif ablation.frequency_aggregation:
            aggregation = "frequency"
        else:
            aggregation = "attention"
        return PropagationOptions(
            layers=self.config.layers,
            eta_mode=self.config.eta_mode,
            refine_gamma=self.config.refine_gamma,
            mean_aggregation=self.config.mean_aggregation,
            global_context=not ablation.global_context_off,
            aggregation=aggregation,
        )

    def transforms(self, behaviors: int) -> list[Tensor]:
        """`W_b` for every behavior, computed once per forward pass."""
        mp = self.params.message_passing()
        if mp.shared is not None:
            return [mp.shared] * behaviors
        behavior = self.params["embedding.behavior"]
        transforms, _ = channel_projection(behavior, mp)
        return transforms

    def forward(self, graph: InteractionGraph) -> Representations:
        params, ablation = self.params, self.ablation
        tables = params.tables()
        count, window = graph.items.shape
        dim = params.dim

        if count == 0:
            raise ContractError("The forward pass needs at least one sub-sequence.")

        events = context_embed(
            graph.items.ravel(),
            graph.behaviors.ravel(),
            graph.slots.ravel(),
            tables,
            positions=graph.positions.ravel(),
            context_off=ablation.context_embedding_off,
        )
        embedded = reshape(events, count, window, dim)

        attention = params.attention()
        if ablation.sequence_encoder_off or attention is None:
            encoded = embedded
        else:
            encoded, _ = encode_batch(embedded, attention, graph.mask)

        if ablation.context_embedding_off or tables.time is None:
            temporal = Tensor.zeros(count, dim)
        else:
            temporal = temporal_projection(base_time_encoding(graph.last_slots, dim), tables.time)

        state = propagate_layers(
            graph,
            encoded,
            tables.item,
            params["embedding.user"],
            temporal,
            params.message_passing(),
            self.transforms(graph.num_behaviors),
            self.options,
        )
        users, subusers, items = combine_layers(state)
        return Representations(users, subusers, items, graph, state)

    __call__ = forward


def apply_ablation(
    ablation: AblationConfig,
    model: TemporalGraphTransformer,
    rng: np.random.Generator | None = None,
) -> TemporalGraphTransformer:
    """A variant of `model` with the given switches.

    Parameters the variant shares with `model` are reused as they are; parameters only the variant
    has are drawn from `rng`, and parameters it no longer uses are dropped.

    Raises:
        ConfigError: If the switches conflict.
        ContractError: If the model does not know its table sizes.
    """
    if model.sizes is None:
        raise ContractError("The model's table sizes are unknown; cannot derive a variant.")
    rng = rng if rng is not None else np.random.default_rng(0)
    bound = 1.0 / np.sqrt(model.config.dim)

    tensors: dict[str, Tensor] = {}
    for name, shape in parameter_shapes(model.sizes, model.config, ablation).items():
        existing = model.params.get(name)
        if existing is not None and existing.shape == shape:
            tensors[name] = existing
        else:
            tensors[name] = Tensor.leaf(rng.uniform(-bound, bound, size=shape), name)

    logger.info(
        "derived variant with %d parameters (%d new)",
        len(tensors),
        sum(1 for name in tensors if name not in model.params),
    )
    return TemporalGraphTransformer(ModelParameters(tensors), model.config, ablation, model.sizes)


__all__ = [
    "ModelParameters",
    "ModelSizes",
    "Representations",
    "TemporalGraphTransformer",
    "apply_ablation",
    "parameter_shapes",
]
