from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

from .config import DataConfig, RunConfig, TimeConfig
from .core.errors import ConfigError, DataError, UnknownUserError
from .data import (
    BehaviorVocabulary,
    InteractionRecord,
    Interactions,
    SubSequence,
    UserSequence,
    build_sequences,
    dataset_statistics,
    drop_behaviors,
    leave_one_out_split,
    load_vocabulary,
    parse_interactions,
    split_all,
    target_items,
)
from .propagation import InteractionGraph, build_graph
from .temporal import TimeSlotMapper

logger = logging.getLogger(__name__)


@dataclass
class Dataset:
    """A parsed corpus split for leave-one-out training and evaluation.

    Attributes:
        vocabulary: Behavior labels.
        target: Behavior id of the target.
        user_labels: Original label of every dense user id.
        item_labels: Original label of every dense item id.
        records: Every event kept after dropping behaviors.
        sequences: Full chronological sequence of each user.
        train_sequences: Sequences without the held-out events.
        test_items: Held-out item of each evaluated user.
        subsequences: Windows of `train_sequences` with global sub-user ids.
        interacted: Target items of each user over the full data, held-out items included.
        mapper: Timestamp to time slot mapping.
    """

    vocabulary: BehaviorVocabulary
    target: int
    user_labels: list[str]
    item_labels: list[str]
    records: list[InteractionRecord]
    sequences: dict[int, UserSequence]
    train_sequences: dict[int, UserSequence]
    test_items: dict[int, int]
    subsequences: list[SubSequence]
    interacted: dict[int, frozenset[int]]
    mapper: TimeSlotMapper
    _graphs: dict[tuple[int, ...] | None, InteractionGraph] = field(
        default_factory=dict, repr=False
    )

    @property
    def num_users(self) -> int:
        return len(self.user_labels)

    @property
    def num_items(self) -> int:
        return len(self.item_labels)

    @cached_property
    def subsequences_by_user(self) -> dict[int, list[SubSequence]]:
        grouped: dict[int, list[SubSequence]] = {}
        for sub in self.subsequences:
            grouped.setdefault(sub.user, []).append(sub)
        return grouped

    @cached_property
    def training_targets(self) -> dict[int, frozenset[int]]:
        """Target items of each user in the training sequences only."""
        return target_items(self.train_sequences, self.target)

    def graph(self, users: Sequence[int] | None = None) -> InteractionGraph:
        """The graph of every training sub-sequence, or of those of `users` only.

        The full graph is built once and reused.
        """
        if users is None:
            if None not in self._graphs:
                self._graphs[None] = self._build(self.subsequences)
            return self._graphs[None]
        grouped = self.subsequences_by_user
        selected = [sub for user in sorted(users) for sub in grouped.get(user, [])]
        return self._build(selected)

    def _build(self, subsequences: Sequence[SubSequence]) -> InteractionGraph:
        return build_graph(
            subsequences, self.num_users, self.num_items, len(self.vocabulary), self.mapper
        )

    def user_id(self, label: str) -> int:
        """Dense id of a user label.

        Raises:
            UnknownUserError: If the label never appeared in the data.
        """
        try:
            return self.user_labels.index(label)
        except ValueError:
            raise UnknownUserError(f"Unknown user '{label}'.") from None

    def statistics(self) -> dict[str, int]:
        stats = dataset_statistics(self.records, self.vocabulary)
        stats["subsequences"] = len(self.subsequences)
        stats["test_users"] = len(self.test_items)
        return stats


def prepare_dataset(
    interactions: Interactions,
    vocabulary: BehaviorVocabulary,
    data: DataConfig,
    time: TimeConfig,
) -> Dataset:
    """Drop behaviors, hold out the last target event per user and cut windows.

    Raises:
        VocabularyError: If the target or a dropped behavior is not in the vocabulary.
        ConfigError: If the target behavior is dropped.
    """
    target = vocabulary.index(data.target_behavior)
    dropped = [vocabulary.index(label) for label in data.drop_behaviors]
    records = drop_behaviors(interactions.records, dropped, target)

    sequences = build_sequences(records)
    train_records, test_items = leave_one_out_split(sequences, target)
    train_sequences = build_sequences(train_records)

    origin = time.origin
    if origin is None:
        origin = min((r.timestamp for r in records), default=0)
    mapper = TimeSlotMapper(time.granularity_seconds, origin)

    dataset = Dataset(
        vocabulary=vocabulary,
        target=target,
        user_labels=list(interactions.user_labels),
        item_labels=list(interactions.item_labels),
        records=records,
        sequences=sequences,
        train_sequences=train_sequences,
        test_items=test_items,
        subsequences=split_all(train_sequences, data.window),
        interacted=target_items(sequences, target),
        mapper=mapper,
    )
    logger.info(
        "prepared %d events, %d sub-sequences, %d test users",
        len(records),
        len(dataset.subsequences),
        len(test_items),
    )
    return dataset


def read_inputs(data: DataConfig) -> tuple[Interactions, BehaviorVocabulary]:
    """Read the vocabulary and interaction files named by `data`.

    Raises:
        ConfigError: If a path is not set.
        DataError: If a file cannot be read.
        ParseError, VocabularyError: For malformed content.
    """
    if not data.vocabulary or not data.interactions:
        raise ConfigError("data.vocabulary and data.interactions must both be set.")
    try:
        vocabulary = load_vocabulary(Path(data.vocabulary).read_text(encoding="utf-8"))
        raw = Path(data.interactions).read_bytes()
    except OSError as error:
        raise DataError(f"Cannot read {error.filename}: {error.strerror}.") from error
    return parse_interactions(raw, vocabulary), vocabulary


def load_dataset(config: RunConfig) -> Dataset:
    interactions, vocabulary = read_inputs(config.data)
    return prepare_dataset(interactions, vocabulary, config.data, config.time)


__all__ = ["Dataset", "load_dataset", "prepare_dataset", "read_inputs"]
