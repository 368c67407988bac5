from __future__ import annotations

import numpy as np
import pytest

from tgt_recsys.core import Tensor, finite_difference_check, gradient_errors, reduce_sum
from tgt_recsys.selfcheck import TOY_START, gradient_sweep, toy_dataset
from tgt_recsys.temporal import base_time_encoding


def test_square() -> None:
    x = Tensor.leaf([3.0], "x")
    assert finite_difference_check(lambda: reduce_sum(x * x), [x], eps=1e-5) < 1e-8


def test_constant_function() -> None:
    x = Tensor.leaf([1.0, 2.0], "x")
    assert finite_difference_check(lambda: Tensor.constant(4.0), [x]) < 1e-4


def test_errors_per_parameter_and_values_restored() -> None:
    a = Tensor.leaf([1.0, 2.0], "a")
    b = Tensor.leaf([[0.5], [-1.5]], "b")
    before = a.values.copy(), b.values.copy()

    errors = gradient_errors(lambda: reduce_sum(a * a) + reduce_sum(b * b * b), {"a": a, "b": b})
    assert set(errors) == {"a", "b"}
    assert max(errors.values()) < 1e-6
    assert np.array_equal(a.values, before[0])
    assert np.array_equal(b.values, before[1])
    assert a.grad is None and b.grad is None


def test_detects_a_wrong_gradient() -> None:
    x = Tensor.leaf([2.0], "x")

    def broken() -> Tensor:
        # Value of x², gradient of x.
        return reduce_sum(x) + Tensor.constant(float(x.values[0] ** 2 - x.values[0]))

    assert finite_difference_check(broken, [x]) > 0.1


def test_small_missing_gradient_counts_in_full() -> None:
    x = Tensor.leaf([2.0], "x")

    def hidden() -> Tensor:
        # Slope 5e-7 that backward never sees.
        return reduce_sum(x * 0.0) + Tensor.constant(5e-7 * float(x.values[0]))

    assert gradient_errors(hidden, {"x": x})["x"] == pytest.approx(1.0, abs=1e-3)


def test_toy_time_encoding_has_no_vanishing_entries() -> None:
    graph = toy_dataset(seed=0).graph()
    slots = graph.slots[graph.mask]
    assert slots.min() > TOY_START // 3600

    encoding = base_time_encoding(slots, 8)
    assert np.abs(encoding).max(axis=0).min() > 1e-3


def test_full_model_sweep() -> None:
    errors = gradient_sweep(dim=8, seed=0, eps=1e-5)
    assert set(errors) == {"temporal", "transformer", "propagation", "model"}
    assert max(errors.values()) < 1e-4
