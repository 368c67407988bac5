from __future__ import annotations

import logging

import numpy as np
import pytest

from tgt_recsys.checkpoint import decode_checkpoint, encode_checkpoint
from tgt_recsys.config import RunConfig
from tgt_recsys.core import ContractError, NumericError, Tensor, backward, reduce_sum
from tgt_recsys.dataset import Dataset
from tgt_recsys.model import ModelParameters, TemporalGraphTransformer
from tgt_recsys.selfcheck import toy_instances
from tgt_recsys.training import (
    OptimizerState,
    build_model,
    format_loss_log,
    hinge_loss,
    instance_loss,
    optimizer_step,
    regularization,
    score,
    train,
)


def test_score_single_pair() -> None:
    h = Tensor.constant(np.array([1.0, 2.0]))
    e = Tensor.constant(np.array([3.0, -1.0]))
    z = Tensor.constant(np.array([1.0, 1.0]))
    assert score(h, e, z).item() == pytest.approx(1.0)


def test_score_rows() -> None:
    h = Tensor.constant(np.array([[1.0, 2.0], [0.0, 1.0], [2.0, 2.0]]))
    e = Tensor.constant(np.array([[3.0, 1.0], [4.0, 0.0], [0.5, 1.0]]))
    z = Tensor.constant(np.array([1.0, 0.5]))
    assert np.allclose(score(h, e, z).values, [4.0, 0.0, 2.0])


def test_hinge_examples() -> None:
    positive = Tensor.leaf(np.array([5.0, 1.0, -4.0]), "positive")
    negative = Tensor.constant(np.array([1.0, 0.8, 4.0]))
    loss = hinge_loss(positive, negative, 0.0, [])
    assert loss.item() == pytest.approx(9.8)

    backward(loss)
    assert np.allclose(positive.gradient, [0.0, -1.0, -1.0])


def test_hinge_needs_aligned_scores() -> None:
    with pytest.raises(ContractError):
        hinge_loss(Tensor.zeros(2), Tensor.zeros(3), 0.0, [])


def test_regularization() -> None:
    params = [Tensor.constant(np.array([1.0, 2.0])), Tensor.constant(np.array([[3.0]]))]
    assert regularization(params).item() == pytest.approx(14.0)


def _single(values: np.ndarray) -> ModelParameters:
    return ModelParameters({"w": Tensor.leaf(values.copy(), "w")})


def _accumulate(params: ModelParameters, grad: np.ndarray) -> None:
    backward(reduce_sum(params["w"] * Tensor.constant(grad)))


def test_zero_gradient_leaves_parameters() -> None:
    params = _single(np.array([0.5, -0.5]))
    state = OptimizerState.for_parameters(params)
    optimizer_step(params, state)
    assert np.array_equal(params["w"].values, [0.5, -0.5])
    assert state.step == 1


def test_first_update_has_learning_rate_size() -> None:
    params = _single(np.array([0.0, 0.0, 0.0]))
    state = OptimizerState.for_parameters(params, learning_rate=0.01)
    _accumulate(params, np.array([3.0, -0.2, 40.0]))
    optimizer_step(params, state)

    assert np.allclose(params["w"].values, [-0.01, 0.01, -0.01], rtol=1e-6)
    assert np.array_equal(params["w"].gradient, np.zeros(3))


def test_non_finite_gradient_is_rejected() -> None:
    params = _single(np.array([1.0, 1.0]))
    state = OptimizerState.for_parameters(params)
    _accumulate(params, np.array([np.nan, 1.0]))

    with pytest.raises(NumericError, match="'w'"):
        optimizer_step(params, state)
    assert np.array_equal(params["w"].values, [1.0, 1.0])
    assert state.step == 0


def test_learning_rate_decays_per_epoch() -> None:
    state = OptimizerState(learning_rate=1.0, decay=0.5)
    state.end_epoch()
    state.end_epoch()
    assert state.learning_rate == 0.25
    assert state.epoch == 2


def test_loss_without_instances_is_weight_decay(toy_model: TemporalGraphTransformer) -> None:
    loss = instance_loss(toy_model, None, [], 0.01)
    norm = sum(float(np.sum(p.values**2)) for p in toy_model.params.values())
    assert loss.item() == pytest.approx(0.01 * norm)


def test_instance_loss_reaches_the_parameters(
    toy: Dataset, toy_model: TemporalGraphTransformer
) -> None:
    loss = instance_loss(toy_model, toy.graph(), toy_instances(toy), 0.0)
    backward(loss)
    assert np.isfinite(loss.item())
    touched = [name for name, p in toy_model.params.items() if np.any(p.gradient != 0.0)]
    assert "score" in touched
    assert "embedding.item" in touched
    assert "attention.query.0" in touched


def test_zero_learning_rate_keeps_the_loss(toy: Dataset, run_config: RunConfig) -> None:
    config = run_config.updated({"train.learning_rate": 0.0, "train.epochs": 3})
    result = train(toy, config)
    losses = [loss for _, loss in result.losses]
    assert [epoch for epoch, _ in result.losses] == [1, 2, 3]
    assert losses == pytest.approx([losses[0]] * 3, rel=1e-12)


def test_training_is_deterministic(toy: Dataset, run_config: RunConfig) -> None:
    first = train(toy, run_config)
    second = train(toy, run_config)
    assert first.losses == second.losses
    for name in first.model.params:
        assert np.array_equal(first.model.params[name].values, second.model.params[name].values)


def test_training_moves_the_parameters(toy: Dataset, run_config: RunConfig) -> None:
    initial = build_model(toy, run_config).params.arrays()
    result = train(toy, run_config)
    assert any(not np.array_equal(initial[n], p.values) for n, p in result.model.params.items())
    assert result.optimizer.epoch == 2


def test_batch_scope_runs(toy: Dataset, run_config: RunConfig) -> None:
    result = train(toy, run_config.updated({"train.graph_scope": "batch"}))
    assert all(np.isfinite(loss) for _, loss in result.losses)


def test_epoch_loss_counts_weight_decay_once(toy: Dataset, run_config: RunConfig) -> None:
    config = run_config.updated(
        {"train.learning_rate": 0.0, "train.epochs": 1, "train.weight_decay": 0.1}
    )
    whole = train(toy, config.updated({"train.batch_size": 3}))
    split = train(toy, config.updated({"train.batch_size": 1}))
    undecayed = train(toy, config.updated({"train.batch_size": 1, "train.weight_decay": 0.0}))

    penalty = 0.1 * regularization(build_model(toy, config).params.values()).item()
    assert split.losses[0][1] == pytest.approx(whole.losses[0][1], rel=1e-9)
    assert split.losses[0][1] - undecayed.losses[0][1] == pytest.approx(penalty, rel=1e-9)


def test_epoch_log_reports_the_learning_rate(
    toy: Dataset, run_config: RunConfig, caplog: pytest.LogCaptureFixture
) -> None:
    config = run_config.updated({"train.learning_rate": 0.01, "train.decay": 0.5})
    with caplog.at_level(logging.INFO, logger="tgt_recsys.training"):
        train(toy, config)

    lines = [r.getMessage() for r in caplog.records if r.getMessage().startswith("epoch ")]
    assert len(lines) == 2
    assert lines[0].endswith("lr 1.000e-02")
    assert lines[1].endswith("lr 5.000e-03")


def test_resume_matches_uninterrupted_run(toy: Dataset, run_config: RunConfig) -> None:
    uninterrupted = train(toy, run_config)

    head = train(toy, run_config.updated({"train.epochs": 1}))
    params, optimizer = decode_checkpoint(encode_checkpoint(head.model.params, head.optimizer))
    config = run_config
    model = TemporalGraphTransformer(params, config.model, config.ablation, head.model.sizes)
    resumed = train(toy, run_config, model, optimizer)

    assert resumed.losses == uninterrupted.losses[1:]
    for name, param in uninterrupted.model.params.items():
        assert np.array_equal(resumed.model.params[name].values, param.values)


def test_epoch_callback(toy: Dataset, run_config: RunConfig) -> None:
    seen: list[int] = []
    train(toy, run_config, on_epoch=lambda epoch, _: seen.append(epoch))
    assert seen == [1, 2]


def test_non_finite_parameters_stop_training(toy: Dataset, run_config: RunConfig) -> None:
    model = build_model(toy, run_config)
    model.params["score"].values[0] = np.nan
    with pytest.raises(NumericError):
        train(toy, run_config, model)


def test_loss_log_format() -> None:
    assert format_loss_log([(1, 0.5), (2, 0.25)]) == "epoch\tloss\n1\t0.5\n2\t0.25\n"
