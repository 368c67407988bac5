from __future__ import annotations

import logging

import numpy as np

from .config import SyntheticConfig
from .core.rng import component_rng
from .data import BehaviorVocabulary, InteractionRecord, Interactions

logger = logging.getLogger(__name__)


def synthetic_vocabulary(cfg: SyntheticConfig) -> BehaviorVocabulary:
    return BehaviorVocabulary(tuple(cfg.labels))


def generate_synthetic(cfg: SyntheticConfig) -> list[InteractionRecord]:
    """Sample a corpus in which context behaviors raise the chance of the target behavior.

    Each user draws `cfg.preferred` items and interacts only with those. At every time step each
    context behavior fires on a preferred item with its base rate. The target fires with
    probability `1 - (1 - base) * (1 - kappa * recent)`, where `recent` is 1 when the same item got
    a context event during the last `cfg.window` steps, the current one included. Events of a step
    carry the same timestamp; context events are listed before target events.

    Returns:
        Records ordered by user, then time. User and item ids are dense and start at 0.
    """
    rng = component_rng(cfg.seed, "synthetic")
    context_rates = np.asarray(cfg.base_rates[:-1], dtype=np.float64)
    target_rate = float(cfg.base_rates[-1])
    target = cfg.behaviors - 1

    records: list[InteractionRecord] = []
    for user in range(cfg.users):
        preferred = np.sort(rng.choice(cfg.items, size=cfg.preferred, replace=False))

        # [horizon, behaviors - 1, preferred]
        context = rng.random((cfg.horizon, len(context_rates), cfg.preferred)) < context_rates[
            None, :, None
        ]
        touched = context.any(axis=1).astype(np.int64)
        running = np.cumsum(touched, axis=0)
        lagged = np.zeros_like(running)
        lagged[cfg.window :] = running[: -cfg.window]
        recent = (running - lagged) > 0

        probability = 1.0 - (1.0 - target_rate) * (1.0 - cfg.kappa * recent)
        fired = rng.random((cfg.horizon, cfg.preferred)) < probability

        for step in range(cfg.horizon):
            stamp = step * cfg.step_seconds
            for behavior, slot in zip(*np.nonzero(context[step])):
                records.append(InteractionRecord(user, int(preferred[slot]), int(behavior), stamp))
            for slot in np.flatnonzero(fired[step]):
                records.append(InteractionRecord(user, int(preferred[slot]), target, stamp))

    logger.info("generated %d synthetic events for %d users", len(records), cfg.users)
    return records


def synthetic_interactions(cfg: SyntheticConfig) -> Interactions:
    """The generated corpus labelled by the decimal form of its ids."""
    return Interactions(
        generate_synthetic(cfg),
        [str(u) for u in range(cfg.users)],
        [str(j) for j in range(cfg.items)],
    )


__all__ = ["generate_synthetic", "synthetic_interactions", "synthetic_vocabulary"]
