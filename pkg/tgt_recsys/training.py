from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .config import RunConfig
from .core.errors import ContractError, NumericError
from .core.rng import component_rng
from .core.tensor import Tensor, backward, gather_rows, matmul, reduce_sum, relu, reshape
from .data import TrainingInstance, make_training_instances
from .dataset import Dataset
from .model import ModelParameters, ModelSizes, TemporalGraphTransformer
from .propagation import InteractionGraph

logger = logging.getLogger(__name__)


def score(subusers: Tensor, items: Tensor, weight: Tensor) -> Tensor:
    """Preference scores `zᵀ(H̃ ∘ Ẽ)`, one per row of `subusers` and `items`.

    Vectors of shape `[d]` give a scalar; matrices `[n, d]` give `[n]` scores.
    """
    single = subusers.ndim == 1
    if single:
        subusers = reshape(subusers, 1, subusers.shape[0])
        items = reshape(items, 1, items.shape[0])
    count, dim = subusers.shape
    scores = reshape(matmul(subusers * items, reshape(weight, dim, 1)), count)
    return reshape(scores) if single else scores


def regularization(params: Iterable[Tensor]) -> Tensor:
    """Squared Frobenius norm summed over parameters."""
    total = Tensor.constant(0.0)
    for param in params:
        total = total + reduce_sum(param * param)
    return total


def hinge_loss(
    positive: Tensor, negative: Tensor, weight_decay: float, params: Iterable[Tensor]
) -> Tensor:
    """`Σ max(0, 1 - pos + neg) + λ ‖Θ‖²` over aligned `[n]` score pairs."""
    if positive.shape != negative.shape:
        raise ContractError(
            f"positive and negative scores must align, got {positive.shape} and {negative.shape}"
        )
    penalty = regularization(params) * weight_decay
    if positive.shape[0] == 0:
        return penalty
    return reduce_sum(relu(1.0 - positive + negative)) + penalty


@dataclass
class OptimizerState:
    """Adam moments, step counter and the decayed learning rate.

    Attributes:
        learning_rate: Current learning rate ρ, already decayed.
        decay: Per-epoch multiplicative learning rate decay.
        step: Number of updates applied.
        epoch: Number of completed epochs.
        first: Exponential average of gradients per parameter.
        second: Exponential average of squared gradients per parameter.
    """

    learning_rate: float = 1e-3
    decay: float = 0.96
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    epoch: int = 0
    first: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_parameters(
        cls, params: ModelParameters, learning_rate: float = 1e-3, decay: float = 0.96
    ) -> OptimizerState:
        return cls(
            learning_rate=learning_rate,
            decay=decay,
            first={name: np.zeros_like(p.values) for name, p in params.items()},
            second={name: np.zeros_like(p.values) for name, p in params.items()},
        )

    def end_epoch(self) -> None:
        self.epoch += 1
        self.learning_rate *= self.decay


def optimizer_step(params: ModelParameters, state: OptimizerState) -> None:
    """Apply one bias-corrected Adam update from the accumulated gradients, then clear them.

    Raises:
        NumericError: If a gradient is not finite; no parameter is updated in that case.
    """
    grads = {name: p.gradient for name, p in params.items()}
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"Non-finite gradient for parameter '{name}'.")

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**state.step
    correction2 = 1.0 - b2**state.step

    for name, param in params.items():
        grad = grads[name]
        first = state.first.setdefault(name, np.zeros_like(grad))
        second = state.second.setdefault(name, np.zeros_like(grad))
        first *= b1
        first += (1.0 - b1) * grad
        second *= b2
        second += (1.0 - b2) * grad * grad
        update = (first / correction1) / (np.sqrt(second / correction2) + state.eps)
        param.values -= state.learning_rate * update

    params.zero_grad()


@dataclass
class TrainingResult:
    model: TemporalGraphTransformer
    optimizer: OptimizerState
    losses: list[tuple[int, float]]


def instance_loss(
    model: TemporalGraphTransformer,
    graph: InteractionGraph | None,
    instances: Sequence[TrainingInstance],
    weight_decay: float,
) -> Tensor:
    """Hinge loss of `instances` under one forward pass over `graph`, plus weight decay.

    Without score pairs only the weight decay term remains and no forward pass runs.
    """
    params = model.params.values()
    pairs = [(inst.subuser, inst.positive, neg) for inst in instances for neg in inst.negatives]
    if not pairs:
        return hinge_loss(Tensor.zeros(0), Tensor.zeros(0), weight_decay, params)
    if graph is None:
        raise ContractError("Scoring training instances needs their graph.")

    reps = model(graph)
    subusers, positives, negatives = (np.array(column, dtype=np.int64) for column in zip(*pairs))
    rows = gather_rows(reps.subusers, graph.locate(subusers))
    z = model.params["score"]
    positive = score(rows, gather_rows(reps.items, positives), z)
    negative = score(rows, gather_rows(reps.items, negatives), z)
    return hinge_loss(positive, negative, weight_decay, params)


def build_model(dataset: Dataset, config: RunConfig) -> TemporalGraphTransformer:
    sizes = ModelSizes(
        users=dataset.num_users,
        items=dataset.num_items,
        behaviors=len(dataset.vocabulary),
        window=config.data.window,
    )
    rng = component_rng(config.run.seed, "init")
    return TemporalGraphTransformer.create(sizes, config.model, config.ablation, rng)


def train(
    dataset: Dataset,
    config: RunConfig,
    model: TemporalGraphTransformer | None = None,
    optimizer: OptimizerState | None = None,
    on_epoch: Callable[[int, float], None] | None = None,
) -> TrainingResult:
    """Fit the model with mini-batches of users, one Adam step per batch.

    Training instances are built once from `component_rng(seed, "negatives")`. Every epoch visits
    the users in the order of `component_rng(seed, "batches", epoch)`. Passing the model and
    optimizer state of a checkpoint continues a run from its last completed epoch.

    Each batch carries the weight decay term in proportion to its share of the users, so the
    reported epoch loss is the hinge sum over all instances plus `λ ‖Θ‖²` once.

    Raises:
        NumericError: If a gradient or the loss stops being finite.
    """
    seed = config.run.seed
    model = model if model is not None else build_model(dataset, config)
    optimizer = optimizer or OptimizerState.for_parameters(
        model.params, config.train.learning_rate, config.train.decay
    )

    instances = make_training_instances(
        dataset.train_sequences,
        dataset.subsequences,
        dataset.target,
        config.data.negatives,
        component_rng(seed, "negatives"),
        dataset.num_items,
        interacted_targets=dataset.interacted,
        test_items=dataset.test_items,
    )
    by_user: dict[int, list[TrainingInstance]] = {}
    for inst in instances:
        by_user.setdefault(inst.user, []).append(inst)
    logger.info("%d training instances over %d users", len(instances), len(by_user))

    scope = config.train.graph_scope
    full_graph = dataset.graph() if scope == "full" and dataset.subsequences else None
    users = np.array(sorted(dataset.subsequences_by_user), dtype=np.int64)
    batch_size = config.train.batch_size
    losses: list[tuple[int, float]] = []

    for epoch in range(optimizer.epoch, config.train.epochs):
        order = component_rng(seed, "batches", epoch).permutation(users)
        batches = [order[k : k + batch_size] for k in range(0, len(order), batch_size)] or [
            np.zeros(0, dtype=np.int64)
        ]

        total = 0.0
        learning_rate = optimizer.learning_rate
        for batch in batches:
            batch_instances = [inst for user in batch for inst in by_user.get(int(user), [])]
            graph = full_graph
            if graph is None and batch_instances:
                graph = dataset.graph([int(u) for u in batch])

            share = len(batch) / len(users) if len(users) else 1.0
            weight_decay = config.train.weight_decay * share
            loss = instance_loss(model, graph, batch_instances, weight_decay)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"Loss became {value} in epoch {epoch + 1}.")
            backward(loss)
            optimizer_step(model.params, optimizer)
            total += value

        optimizer.end_epoch()
        losses.append((epoch + 1, total))
        logger.info("epoch %d loss %.6f lr %.3e", epoch + 1, total, learning_rate)
        if on_epoch is not None:
            on_epoch(epoch + 1, total)

    return TrainingResult(model, optimizer, losses)


def format_loss_log(losses: Iterable[tuple[int, float]]) -> str:
    return "epoch\tloss\n" + "".join(f"{epoch}\t{loss!r}\n" for epoch, loss in losses)


def write_loss_log(path: str | Path, losses: Iterable[tuple[int, float]]) -> None:
    Path(path).write_text(format_loss_log(losses), encoding="utf-8")


__all__ = [
    "OptimizerState",
    "TrainingResult",
    "build_model",
    "format_loss_log",
    "hinge_loss",
    "instance_loss",
    "optimizer_step",
    "regularization",
    "score",
    "train",
    "write_loss_log",
]
