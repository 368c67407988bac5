from __future__ import annotations

import logging
from typing import Callable, Mapping, Sequence

from .tensor import Tensor

logger = logging.getLogger(__name__)

ScalarFunction = Callable[[], Tensor]


def _named(params: Mapping[str, Tensor] | Sequence[Tensor]) -> dict[str, Tensor]:
    if isinstance(params, Mapping):
        return dict(params)
    return {p.name or f"param{i}": p for i, p in enumerate(params)}


def gradient_errors(
    f: ScalarFunction,
    params: Mapping[str, Tensor] | Sequence[Tensor],
    eps: float = 1e-5,
    floor: float = 1e-8,
) -> dict[str, float]:
    """Compare analytic gradients against central finite differences, parameter by parameter.

    `f` is evaluated with the parameters' current values; it must be deterministic, so any sampling
    has to be frozen before calling. Every entry is perturbed by `±eps` in place and restored
    afterwards.

    Entries whose gradients are both below `floor` are compared in absolute terms, divided by
    `floor`.

    Returns:
        For each parameter, the largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`
        over its entries.
    """
    named = _named(params)
    for tensor in named.values():
        tensor.zero_grad()

    f().backward()
    analytic = {name: tensor.gradient.copy() for name, tensor in named.items()}

    errors: dict[str, float] = {}
    for name, tensor in named.items():
        flat = tensor.values.reshape(-1)
        grad = analytic[name].reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            upper = f().item()
            flat[i] = original - eps
            lower = f().item()
            flat[i] = original

            numeric = (upper - lower) / (2.0 * eps)
            denominator = max(abs(grad[i]), abs(numeric), floor)
            worst = max(worst, abs(grad[i] - numeric) / denominator)
        errors[name] = worst
        logger.debug("gradient check %s: max relative error %.3e", name, worst)

    for tensor in named.values():
        tensor.zero_grad()
    return errors


def finite_difference_check(
    f: ScalarFunction,
    params: Mapping[str, Tensor] | Sequence[Tensor],
    eps: float = 1e-5,
) -> float:
    """Maximum relative gradient error over all entries of all `params` (0 when there are none)."""
    errors = gradient_errors(f, params, eps)
    return float(max(errors.values(), default=0.0))


__all__ = ["finite_difference_check", "gradient_errors"]
