from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .core.errors import ConfigError, ContractError, DimensionError
from .core.tensor import (
    Tensor,
    broadcast_rows,
    concat,
    gather_rows,
    matmul,
    reduce_sum,
    relu,
    reshape,
    segment_sum,
    softmax,
    transpose,
)
from .data import SubSequence
from .temporal import TimeSlotMapper

logger = logging.getLogger(__name__)


@dataclass
class InteractionGraph:
    """Sub-sequences of a set of users laid out as padded arrays.

    Sub-sequences are indexed locally by their position `s` in the graph. The item side is the
    bipartite graph whose edges `(s, j, b)` are the events of sub-sequence `s`; the user side is the
    star graph joining each user to all of their sub-sequences in the graph.

    Attributes:
        subusers: Global sub-user id of each local sub-sequence `[S]`.
        owners: User id of each sub-sequence `[S]`.
        items, behaviors, slots: Per-event ids and time slots `[S, W]`, zero at padding.
        mask: True at real events `[S, W]`.
        last_slots: Time slot of the last event of each sub-sequence `[S]`.
        users: Users with at least one sub-sequence in the graph, ascending `[G]`.
        user_rows: Local sub-sequences of each graph user, padded with 0 `[G, R]`.
        user_mask: True where `user_rows` holds a real sub-sequence `[G, R]`.
    """

    subusers: np.ndarray
    owners: np.ndarray
    items: np.ndarray
    behaviors: np.ndarray
    slots: np.ndarray
    mask: np.ndarray
    last_slots: np.ndarray
    users: np.ndarray
    user_rows: np.ndarray
    user_mask: np.ndarray
    num_users: int
    num_items: int
    num_behaviors: int
    _local: dict[int, int] = field(default_factory=dict, repr=False)

    @property
    def size(self) -> int:
        return int(self.subusers.shape[0])

    @property
    def window(self) -> int:
        return int(self.items.shape[1])

    @property
    def positions(self) -> np.ndarray:
        """Position of every event inside its window `[S, W]`."""
        return np.broadcast_to(np.arange(self.window), self.items.shape)

    def locate(self, subusers: Sequence[int] | np.ndarray) -> np.ndarray:
        """Local indices of global sub-user ids.

        Raises:
            KeyError: For a sub-user that is not part of this graph.
        """
        if not self._local:
            self._local.update({int(s): k for k, s in enumerate(self.subusers)})
        return np.array([self._local[int(s)] for s in subusers], dtype=np.int64)

    @cached_property
    def edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Sub-sequence, item and behavior of every event, in window order."""
        rows, cols = np.nonzero(self.mask)
        return rows, self.items[rows, cols], self.behaviors[rows, cols]

    @cached_property
    def subsequence_counts(self) -> np.ndarray:
        """Events per behavior in each sub-sequence `[S, B]`."""
        counts = np.zeros((self.size, self.num_behaviors))
        rows, _, behaviors = self.edges
        np.add.at(counts, (rows, behaviors), 1.0)
        return counts

    @cached_property
    def item_counts(self) -> np.ndarray:
        """Edges per behavior incident to each item `[J, B]`."""
        counts = np.zeros((self.num_items, self.num_behaviors))
        _, items, behaviors = self.edges
        np.add.at(counts, (items, behaviors), 1.0)
        return counts


def build_graph(
    subsequences: Sequence[SubSequence],
    num_users: int,
    num_items: int,
    num_behaviors: int,
    mapper: TimeSlotMapper,
) -> InteractionGraph:
    """Lay out sub-sequences as an `InteractionGraph`.

    Raises:
        ContractError: If no sub-sequence is given or one of them is empty.
    """
    if not subsequences:
        raise ContractError("Cannot build a graph without sub-sequences.")
    if any(not sub.records for sub in subsequences):
        raise ContractError("Sub-sequences must hold at least one event.")

    count = len(subsequences)
    window = max(len(sub.records) for sub in subsequences)
    items = np.zeros((count, window), dtype=np.int64)
    behaviors = np.zeros((count, window), dtype=np.int64)
    slots = np.zeros((count, window), dtype=np.int64)
    mask = np.zeros((count, window), dtype=bool)

    for s, sub in enumerate(subsequences):
        k = len(sub.records)
        items[s, :k] = [r.item for r in sub.records]
        behaviors[s, :k] = [r.behavior for r in sub.records]
        slots[s, :k] = mapper.slots([r.timestamp for r in sub.records])
        mask[s, :k] = True

    owners = np.array([sub.user for sub in subsequences], dtype=np.int64)
    last_slots = slots[np.arange(count), mask.sum(axis=1) - 1]

    users = np.unique(owners)
    members = [np.flatnonzero(owners == u) for u in users]
    longest = max(len(m) for m in members)
    user_rows = np.zeros((len(users), longest), dtype=np.int64)
    user_mask = np.zeros((len(users), longest), dtype=bool)
    for g, rows in enumerate(members):
        user_rows[g, : len(rows)] = rows
        user_mask[g, : len(rows)] = True

    subusers = np.array([sub.subuser for sub in subsequences], dtype=np.int64)
    return InteractionGraph(
        subusers=subusers,
        owners=owners,
        items=items,
        behaviors=behaviors,
        slots=slots,
        mask=mask,
        last_slots=last_slots,
        users=users,
        user_rows=user_rows,
        user_mask=user_mask,
        num_users=num_users,
        num_items=num_items,
        num_behaviors=num_behaviors,
        _local={int(s): k for k, s in enumerate(subusers)},
    )


@dataclass
class MessagePassingParams:
    """Parameters shared by every propagation layer.

    Either the multi-channel set (`bases`, `gate`, `gate_bias`) or the single `shared` transform is
    present. Cross-type aggregation uses `attention_weight` and `attention_bias`, or `concat_weight`
    when behavior embeddings are concatenated.
    """

    bases: Tensor | None = None
    gate: Tensor | None = None
    gate_bias: Tensor | None = None
    shared: Tensor | None = None
    attention_weight: Tensor | None = None
    attention_bias: Tensor | None = None
    concat_weight: Tensor | None = None


@dataclass(frozen=True)
class PropagationOptions:
    layers: int = 2
    eta_mode: str = "softmax"
    refine_gamma: str = "fresh"
    mean_aggregation: bool = False
    global_context: bool = True
    aggregation: str = "attention"

    def __post_init__(self) -> None:
        if self.aggregation not in ("attention", "concat", "frequency"):
            raise ConfigError(f"Unknown behavior aggregation '{self.aggregation}'.")


def channel_projection(
    behavior_embeddings: Tensor, params: MessagePassingParams
) -> tuple[list[Tensor], Tensor | None]:
    """Behavior-specific transforms `W_b = Σ_h softmax(P · e_b + μ)_h · W̄_h`.

    Args:
        behavior_embeddings: One behavior vector `[d]` or all of them `[B, d]`.
        params: Holds the channel bases, or a single shared transform used for every behavior.

    Returns:
        One `[d, d]` matrix per behavior and the channel weights `β` of shape `[B, H]`, or None
        when the shared transform is used.
    """
    embeddings = behavior_embeddings
    if embeddings.ndim == 1:
        embeddings = reshape(embeddings, 1, embeddings.shape[0])
    count = embeddings.shape[0]

    if params.shared is not None:
        return [params.shared] * count, None

    if params.bases is None or params.gate is None or params.gate_bias is None:
        raise ContractError("The multi-channel projection needs bases, gate and gate bias.")
    channels, dim, _ = params.bases.shape
    if params.gate.shape != (channels, embeddings.shape[1]):
        raise DimensionError(
            f"channel gate {params.gate.shape} does not fit {channels} bases "
            f"and embeddings {embeddings.shape}"
        )

    logits = matmul(embeddings, transpose(params.gate)) + broadcast_rows(params.gate_bias, count)
    betas = softmax(logits, axis=1)
    mixed = matmul(betas, reshape(params.bases, channels, dim * dim))
    transforms = [reshape(gather_rows(mixed, [b]), dim, dim) for b in range(count)]
    return transforms, betas


def _mean_weights(counts: np.ndarray, dim: int) -> Tensor:
    safe = np.where(counts > 0, counts, 1.0)
    return Tensor.constant(np.repeat((1.0 / safe)[:, None], dim, axis=1))


def aggregate_items_to_subuser(
    rows: Tensor,
    behaviors: np.ndarray,
    mask: np.ndarray,
    transforms: Sequence[Tensor],
    mean: bool = False,
) -> list[Tensor]:
    """Behavior-aware messages from items to sub-users, `H_b = ReLU(Σ_{k: b_k = b} Ē_k · W_b)`.

    Args:
        rows: Item embeddings at each event `[S, W, d]`.
        behaviors: Behavior id of each event `[S, W]`.
        mask: True at real events `[S, W]`.
        transforms: `W_b` for every behavior.
        mean: Divide each sum by its number of events.

    Returns:
        `H_b` of shape `[S, d]` for every behavior; zero rows where the behavior is absent.
    """
    count, _, dim = rows.shape
    parts = []
    for b, transform in enumerate(transforms):
        selected = (behaviors == b) & mask
        weights = np.repeat(selected[..., None].astype(np.float64), dim, axis=2)
        summed = reduce_sum(rows * Tensor.constant(weights), axis=1)
        if mean:
            summed = summed * _mean_weights(selected.sum(axis=1), dim)
        parts.append(relu(matmul(summed, transform)))
    return parts


def _stack(parts: Sequence[Tensor]) -> Tensor:
    count, dim = parts[0].shape
    return concat([reshape(p, count, 1, dim) for p in parts], axis=1)


def _mix(weights: Tensor, stacked: Tensor) -> Tensor:
    count, behaviors, dim = stacked.shape
    return reshape(matmul(reshape(weights, count, 1, behaviors), stacked), count, dim)


def cross_type_aggregate(
    parts: Sequence[Tensor],
    weight: Tensor,
    bias: Tensor,
    present: np.ndarray | None = None,
) -> tuple[Tensor, Tensor]:
    """Attention over behavior-specific embeddings.

    The query is `q = ReLU((Σ_b H_b) · W_A + μ_A)`; behavior `b` scores `H_bᵀ q`, and the
    weights `γ` are the softmax of the scores over behaviors.

    Args:
        parts: `H_b` of shape `[n, d]` for every behavior.
        weight: `W_A` of shape `[d, d]`.
        bias: `μ_A` of shape `[d]`.
        present: Optional boolean `[n, B]`; behaviors marked False get zero weight. Every row needs
            at least one True entry.

    Returns:
        The aggregated embeddings `[n, d]` and `γ` of shape `[n, B]`.
    """
    if not parts:
        raise ContractError("cross_type_aggregate needs at least one behavior.")
    count, dim = parts[0].shape
    stacked = _stack(parts)

    query = relu(matmul(reduce_sum(stacked, axis=1), weight) + broadcast_rows(bias, count))
    scores = reshape(matmul(stacked, reshape(query, count, dim, 1)), count, len(parts))
    if present is not None:
        scores = scores + Tensor.constant(np.where(present, 0.0, -np.inf))

    gamma = softmax(scores, axis=1)
    return _mix(gamma, stacked), gamma


def concat_aggregate(parts: Sequence[Tensor], weight: Tensor) -> tuple[Tensor, Tensor]:
    """Concatenate behavior embeddings and project them, `[H_1 | ... | H_B] · W`.

    The returned weights are uniform, since no behavior is preferred.
    """
    count = parts[0].shape[0]
    merged = matmul(concat(list(parts), axis=1), weight)
    return merged, Tensor.constant(np.full((count, len(parts)), 1.0 / len(parts)))


def frequency_aggregate(parts: Sequence[Tensor], counts: np.ndarray) -> tuple[Tensor, Tensor]:
    """Weight behavior embeddings by each behavior's share of the events."""
    totals = counts.sum(axis=1, keepdims=True)
    ratios = counts / np.where(totals > 0, totals, 1.0)
    gamma = Tensor.constant(ratios)
    return _mix(gamma, _stack(parts)), gamma


def _combine_behaviors(
    parts: Sequence[Tensor],
    params: MessagePassingParams,
    options: PropagationOptions,
    counts: np.ndarray,
    present: np.ndarray | None = None,
) -> tuple[Tensor, Tensor]:
    if options.aggregation == "concat":
        if params.concat_weight is None:
            raise ContractError("Concatenated aggregation needs its projection.")
        return concat_aggregate(parts, params.concat_weight)
    if options.aggregation == "frequency":
        return frequency_aggregate(parts, counts)
    if params.attention_weight is None or params.attention_bias is None:
        raise ContractError("Cross-type attention needs its weight and bias.")
    return cross_type_aggregate(parts, params.attention_weight, params.attention_bias, present)


def global_user_aggregate(
    inputs: Tensor, users: Tensor, graph: InteractionGraph, eta_mode: str = "softmax"
) -> tuple[Tensor, np.ndarray]:
    """Aggregate each user's sub-sequences into a new user embedding.

    For user `i` with inputs `x^r = H̄^r + t^r`, the scores are `η_r = Γ_iᵀ x^r`, normalized by
    a softmax over the user's sub-sequences unless `eta_mode` is `literal`, and
    `Γ̄_i = ReLU(Σ_r η_r x^r)`. Users without sub-sequences in the graph keep their embedding.

    Args:
        inputs: `x^r` for every local sub-sequence `[S, d]`.
        users: Current user embeddings `[U, d]`.
        graph: Supplies the user to sub-sequence layout.
        eta_mode: `softmax` or `literal`.

    Returns:
        The new user table `[U, d]` and `η` for every local sub-sequence `[S]`.
    """
    if eta_mode not in ("softmax", "literal"):
        raise ConfigError(f"eta_mode must be 'softmax' or 'literal', got {eta_mode}.")
    count, dim = inputs.shape
    members, longest = graph.user_rows.shape

    owners = gather_rows(users, graph.owners)
    eta = reduce_sum(owners * inputs, axis=1)

    padded = reshape(gather_rows(reshape(eta, count, 1), graph.user_rows.ravel()), members, longest)
    if eta_mode == "softmax":
        weights = softmax(padded + Tensor.constant(np.where(graph.user_mask, 0.0, -np.inf)), axis=1)
    else:
        weights = padded * Tensor.constant(graph.user_mask.astype(np.float64))

    stacked = reshape(gather_rows(inputs, graph.user_rows.ravel()), members, longest, dim)
    fresh = relu(reshape(matmul(reshape(weights, members, 1, longest), stacked), members, dim))

    source = np.arange(graph.num_users) + members
    source[graph.users] = np.arange(members)
    table = gather_rows(concat([fresh, users], axis=0), source)

    per_subsequence = np.zeros(count)
    per_subsequence[graph.user_rows[graph.user_mask]] = weights.values[graph.user_mask]
    return table, per_subsequence


def refine_subusers(users: Tensor, temporal: Tensor, owners: np.ndarray) -> Tensor:
    """Sub-user embeddings reset to their owner's embedding plus their temporal embedding."""
    return gather_rows(users, owners) + temporal


def aggregate_subusers_to_items(
    subusers: Tensor,
    graph: InteractionGraph,
    transforms: Sequence[Tensor],
    previous: Tensor,
    params: MessagePassingParams,
    options: PropagationOptions,
) -> tuple[Tensor, Tensor]:
    """Messages from sub-users to items, combined over behaviors.

    Per behavior, `Ē_j^b = ReLU(Σ_{(r, j, b)} H̄^r · W_b)` over the edges of item `j`.

    Behavior weights are computed from the item-side embeddings themselves; behaviors with no edge
    at an item get zero weight. Items without edges keep their `previous` embedding.

    Returns:
        The new item table `[J, d]` and the item-side behavior weights `[J, B]`.
    """
    rows, items, behaviors = graph.edges
    num_items = graph.num_items
    mean = options.mean_aggregation
    dim = subusers.shape[1]

    parts = []
    for b, transform in enumerate(transforms):
        selected = behaviors == b
        summed = segment_sum(gather_rows(subusers, rows[selected]), items[selected], num_items)
        if mean:
            summed = summed * _mean_weights(graph.item_counts[:, b], dim)
        parts.append(relu(matmul(summed, transform)))

    counts = graph.item_counts
    connected = counts.sum(axis=1) > 0
    present = (counts > 0) | ~connected[:, None]
    fresh, gamma = _combine_behaviors(parts, params, options, counts, present)

    source = np.where(connected, np.arange(num_items), np.arange(num_items) + num_items)
    return gather_rows(concat([fresh, previous], axis=0), source), gamma


@dataclass
class LayerState:
    """Embeddings of every layer, layer 0 first, with per-layer attention diagnostics.

    Attributes:
        items: Item tables `[J, d]`.
        subusers: Sub-user embeddings `[S, d]` of the graph's sub-sequences.
        users: User tables `[U, d]`.
        behavior_weights: Sub-user side `γ` of each propagation layer `[S, B]`.
        subsequence_weights: `η` of each propagation layer `[S]`; None when users are not
            aggregated.
    """

    items: list[Tensor] = field(default_factory=list)
    subusers: list[Tensor] = field(default_factory=list)
    users: list[Tensor] = field(default_factory=list)
    behavior_weights: list[np.ndarray] = field(default_factory=list)
    subsequence_weights: list[np.ndarray | None] = field(default_factory=list)

    @property
    def layers(self) -> int:
        return len(self.items) - 1


def propagate_layers(
    graph: InteractionGraph,
    encoded: Tensor,
    items: Tensor,
    users: Tensor,
    temporal: Tensor,
    params: MessagePassingParams,
    transforms: Sequence[Tensor],
    options: PropagationOptions,
) -> LayerState:
    """Run `options.layers` rounds of message passing.

    Each round passes items to sub-users per behavior, aggregates behaviors, aggregates each
    user's sub-sequences, refines the sub-users from their user and passes them back to items.

    Args:
        graph: The sub-sequences taking part.
        encoded: Encoded event embeddings `[S, W, d]`, the item rows of the first round.
        items: Layer-0 item table `[J, d]`.
        users: Layer-0 user table `[U, d]`.
        temporal: Temporal embedding of each sub-sequence's last event `[S, d]`.
        params: Shared message passing parameters.
        transforms: `W_b` for every behavior.
        options: Layer count and model variant.
    """
    state = LayerState(
        items=[items],
        subusers=[refine_subusers(users, temporal, graph.owners)],
        users=[users],
    )
    count, window, dim = encoded.shape
    counts = graph.subsequence_counts

    for layer in range(options.layers):
        if layer == 0:
            rows = encoded
        else:
            rows = reshape(gather_rows(state.items[-1], graph.items.ravel()), count, window, dim)

        parts = aggregate_items_to_subuser(
            rows, graph.behaviors, graph.mask, transforms, options.mean_aggregation
        )
        merged, gamma = _combine_behaviors(parts, params, options, counts)

        if options.global_context:
            table, eta = global_user_aggregate(
                merged + temporal, state.users[-1], graph, options.eta_mode
            )
            source = table if options.refine_gamma == "fresh" else state.users[-1]
            subusers = refine_subusers(source, temporal, graph.owners)
        else:
            table, eta = state.users[-1], None
            subusers = merged

        item_table, _ = aggregate_subusers_to_items(
            subusers, graph, transforms, state.items[-1], params, options
        )

        state.items.append(item_table)
        state.subusers.append(subusers)
        state.users.append(table)
        state.behavior_weights.append(gamma.values)
        state.subsequence_weights.append(eta)
        logger.debug("propagated layer %d over %d sub-sequences", layer + 1, count)

    return state


def combine_layers(state: LayerState) -> tuple[Tensor, Tensor, Tensor]:
    """Element-wise sums over layers, layer 0 included, of users, sub-users and items."""

    def total(tensors: list[Tensor]) -> Tensor:
        result = tensors[0]
        for tensor in tensors[1:]:
            result = result + tensor
        return result

    return total(state.users), total(state.subusers), total(state.items)


__all__ = [
    "InteractionGraph",
    "LayerState",
    "MessagePassingParams",
    "PropagationOptions",
    "aggregate_items_to_subuser",
    "aggregate_subusers_to_items",
    "build_graph",
    "channel_projection",
    "combine_layers",
    "concat_aggregate",
    "cross_type_aggregate",
    "frequency_aggregate",
    "global_user_aggregate",
    "propagate_layers",
    "refine_subusers",
]
