from __future__ import annotations

import bisect
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core.errors import ConfigError, ParseError, SamplingError, VocabularyError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class InteractionRecord:
    """One `(user, item, behavior, timestamp)` event with dense integer ids."""

    user: int
    item: int
    behavior: int
    timestamp: int


@dataclass(frozen=True)
class UserSequence:
    """All events of one user, ordered by timestamp (ties keep input order)."""

    user: int
    records: tuple[InteractionRecord, ...]

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class SubSequence:
    """A contiguous chronological window of a user's events and its sub-user node.

    Attributes:
        user: Owner of the window.
        ordinal: Position `r` of the window among the owner's windows, from 0.
        records: Between 1 and W events.
        subuser: Node id of the window, unique across all users.
    """

    user: int
    ordinal: int
    records: tuple[InteractionRecord, ...]
    subuser: int

    @property
    def last_timestamp(self) -> int:
        return self.records[-1].timestamp


@dataclass(frozen=True)
class TrainingInstance:
    """A sub-sequence paired with the next target item and sampled negatives."""

    user: int
    ordinal: int
    subuser: int
    positive: int
    negatives: tuple[int, ...]


@dataclass(frozen=True)
class BehaviorVocabulary:
    """Behavior labels; the line index of a label is its behavior id."""

    labels: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        duplicated = [label for label, n in Counter(self.labels).items() if n > 1]
        if duplicated:
            raise VocabularyError(f"Duplicated behavior label '{duplicated[0]}'.")
        object.__setattr__(self, "_index", {label: i for i, label in enumerate(self.labels)})

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise VocabularyError(
                f"Unknown behavior '{label}'; expected one of {', '.join(self.labels)}."
            ) from None


def load_vocabulary(text: str) -> BehaviorVocabulary:
    """Read one label per line, ignoring blank lines and `#` comments."""
    labels = []
    for line in text.splitlines():
        stripped = line.strip()
        if stripped and not stripped.startswith("#"):
            labels.append(stripped)
    return BehaviorVocabulary(tuple(labels))


@dataclass
class Interactions:
    """Parsed events with the original user and item labels of every dense id."""

    records: list[InteractionRecord]
    user_labels: list[str]
    item_labels: list[str]


class _IdMap:
    def __init__(self) -> None:
        self.ids: dict[str, int] = {}
        self.labels: list[str] = []

    def __call__(self, label: str) -> int:
        dense = self.ids.get(label)
        if dense is None:
            dense = self.ids[label] = len(self.labels)
            self.labels.append(label)
        return dense


def parse_interactions(
    source: bytes | str, vocabulary: BehaviorVocabulary, remap: bool = True
) -> Interactions:
    """Parse tab-separated `user item behavior timestamp` lines.

    Blank lines and lines starting with `#` are skipped. With `remap`, user and item labels are
    arbitrary tokens mapped to dense ids in order of first appearance; without it they must already
    be non-negative integers and are kept as they are.

    Raises:
        ParseError: For undecodable input, a wrong column count or a non-integer field.
        VocabularyError: For a behavior label missing from the vocabulary.
    """
    if isinstance(source, bytes):
        try:
            source = source.decode("utf-8")
        except UnicodeDecodeError as error:
            line = source[: error.start].count(b"\n") + 1
            raise ParseError(line, "input is not valid UTF-8") from error

    users, items = _IdMap(), _IdMap()
    records: list[InteractionRecord] = []

    for number, line in enumerate(source.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        fields_ = line.rstrip("\r").split("\t")
        if len(fields_) != 4:
            raise ParseError(number, f"expected 4 tab-separated fields, got {len(fields_)}")
        user, item, behavior, timestamp = (f.strip() for f in fields_)

        try:
            stamp = int(timestamp)
        except ValueError:
            raise ParseError(number, f"timestamp '{timestamp}' is not an integer") from None

        try:
            behavior_id = vocabulary.index(behavior)
        except VocabularyError as error:
            raise VocabularyError(f"line {number}: {error}") from None

        if remap:
            records.append(InteractionRecord(users(user), items(item), behavior_id, stamp))
            continue

        if not (user.isdigit() and item.isdigit()):
            raise ParseError(number, "user and item ids must be non-negative integers")
        records.append(InteractionRecord(int(user), int(item), behavior_id, stamp))

    if not remap:
        top_user = max((r.user for r in records), default=-1)
        top_item = max((r.item for r in records), default=-1)
        return Interactions(records, _identity(top_user + 1), _identity(top_item + 1))

    return Interactions(records, users.labels, items.labels)


def _identity(size: int) -> list[str]:
    return [str(i) for i in range(size)]


def emit_interactions(
    records: Iterable[InteractionRecord],
    vocabulary: BehaviorVocabulary,
    user_labels: Sequence[str] | None = None,
    item_labels: Sequence[str] | None = None,
) -> str:
    """Write records in the format read by `parse_interactions`."""
    lines = []
    for r in records:
        user = user_labels[r.user] if user_labels is not None else str(r.user)
        item = item_labels[r.item] if item_labels is not None else str(r.item)
        lines.append(f"{user}\t{item}\t{vocabulary.labels[r.behavior]}\t{r.timestamp}\n")
    return "".join(lines)


def drop_behaviors(
    records: Iterable[InteractionRecord], behaviors: Iterable[int], target: int
) -> list[InteractionRecord]:
    """Remove every event of the listed behaviors.

    Dropping all context behaviors leaves the target-only corpus.

    Raises:
        ConfigError: If the target behavior is listed.
    """
    dropped = set(behaviors)
    if target in dropped:
        raise ConfigError("The target behavior cannot be dropped.")
    return [r for r in records if r.behavior not in dropped]


def dataset_statistics(
    records: Sequence[InteractionRecord], vocabulary: BehaviorVocabulary
) -> dict[str, int]:
    """User, item and interaction counts, plus one count per behavior label."""
    counts = Counter(r.behavior for r in records)
    stats = {
        "users": len({r.user for r in records}),
        "items": len({r.item for r in records}),
        "interactions": len(records),
    }
    for behavior, label in enumerate(vocabulary.labels):
        stats[label] = counts.get(behavior, 0)
    return stats


def build_sequences(records: Iterable[InteractionRecord]) -> dict[int, UserSequence]:
    """Group records by user and order them by timestamp; equal timestamps keep input order."""
    grouped: dict[int, list[InteractionRecord]] = {}
    for r in records:
        grouped.setdefault(r.user, []).append(r)

    return {
        user: UserSequence(user, tuple(sorted(grouped[user], key=lambda r: r.timestamp)))
        for user in sorted(grouped)
    }


def split_subsequences(
    seq: UserSequence, window: int, first_subuser: int = 0
) -> list[SubSequence]:
    """Cut a sequence into consecutive windows of `window` events; the last may be shorter.

    Args:
        seq: The user's chronologically ordered events.
        window: Window length W.
        first_subuser: Node id given to the first window; later windows count up from it.
    """
    if window < 1:
        raise ConfigError(f"Sub-sequence window must be >= 1, got {window}.")
    records = seq.records
    return [
        SubSequence(seq.user, r, records[start : start + window], first_subuser + r)
        for r, start in enumerate(range(0, len(records), window))
    ]


def split_all(sequences: Mapping[int, UserSequence], window: int) -> list[SubSequence]:
    """Windows of every user, in user order, with globally unique sub-user ids."""
    subsequences: list[SubSequence] = []
    for user in sorted(sequences):
        subsequences.extend(split_subsequences(sequences[user], window, len(subsequences)))
    return subsequences


def leave_one_out_split(
    sequences: Mapping[int, UserSequence], target_behavior: int
) -> tuple[list[InteractionRecord], dict[int, int]]:
    """Hold out each user's last target event.

    Only users with at least two target events get a test item. Context events are never held
    out, including those that happen after the held-out event.

    Returns:
        The training records, per user in chronological order, and the held-out item per user.
    """
    train: list[InteractionRecord] = []
    test: dict[int, int] = {}

    for user in sorted(sequences):
        records = sequences[user].records
        targets = [k for k, r in enumerate(records) if r.behavior == target_behavior]
        if len(targets) < 2:
            train.extend(records)
            continue
        held_out = targets[-1]
        test[user] = records[held_out].item
        train.extend(r for k, r in enumerate(records) if k != held_out)

    return train, test


def target_items(
    sequences: Mapping[int, UserSequence], target_behavior: int
) -> dict[int, frozenset[int]]:
    """Items each user interacted with under the target behavior."""
    return {
        user: frozenset(r.item for r in seq.records if r.behavior == target_behavior)
        for user, seq in sequences.items()
    }


def sample_negatives(
    user: int,
    count: int,
    catalog: int | Sequence[int],
    interacted_targets: Iterable[int],
    rng: np.random.Generator,
) -> list[int]:
    """Draw `count` items uniformly, with replacement, among items the user never targeted.

    Raises:
        SamplingError: If every catalog item was targeted by the user.
    """
    if count == 0:
        return []
    items = range(catalog) if isinstance(catalog, int) else catalog
    excluded = set(interacted_targets)
    pool = np.array(sorted(set(items) - excluded), dtype=np.int64)
    if pool.size == 0:
        raise SamplingError(f"User {user} has no item left to sample negatives from.")
    return [int(i) for i in pool[rng.integers(pool.size, size=count)]]


def make_training_instances(
    sequences: Mapping[int, UserSequence],
    subsequences: Sequence[SubSequence],
    target_behavior: int,
    count: int,
    rng: np.random.Generator,
    num_items: int,
    interacted_targets: Mapping[int, Iterable[int]] | None = None,
    test_items: Mapping[int, int] | None = None,
) -> list[TrainingInstance]:
    """Pair each sub-sequence with the first later target event and `count` negatives.

    Args:
        sequences: Training sequences (held-out events already removed).
        subsequences: Windows cut from `sequences`.
        target_behavior: Behavior id of the target.
        count: Negatives per instance C.
        rng: Source of the negative draws.
        num_items: Catalog size.
        interacted_targets: Items excluded from negatives; defaults to the target items of
            `sequences`. Pass the sets of the full data so held-out items are excluded too.
        test_items: Held-out item per user; it is never used as a positive.
    """
    test_items = test_items or {}
    if interacted_targets is None:
        interacted_targets = target_items(sequences, target_behavior)

    timelines: dict[int, tuple[list[int], list[int]]] = {}
    for user, seq in sequences.items():
        events = [
            (r.timestamp, r.item)
            for r in seq.records
            if r.behavior == target_behavior and r.item != test_items.get(user)
        ]
        timelines[user] = ([t for t, _ in events], [i for _, i in events])

    instances: list[TrainingInstance] = []
    for sub in subsequences:
        stamps, items = timelines.get(sub.user, ([], []))
        k = bisect.bisect_right(stamps, sub.last_timestamp)
        if k == len(stamps):
            continue
        negatives = sample_negatives(
            sub.user, count, num_items, interacted_targets.get(sub.user, ()), rng
        )
        instances.append(
            TrainingInstance(sub.user, sub.ordinal, sub.subuser, items[k], tuple(negatives))
        )

    return instances


__all__ = [
    "BehaviorVocabulary",
    "InteractionRecord",
    "Interactions",
    "SubSequence",
    "TrainingInstance",
    "UserSequence",
    "build_sequences",
    "dataset_statistics",
    "drop_behaviors",
    "emit_interactions",
    "leave_one_out_split",
    "load_vocabulary",
    "make_training_instances",
    "parse_interactions",
    "sample_negatives",
    "split_all",
    "split_subsequences",
    "target_items",
]
