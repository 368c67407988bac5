"""Leave-one-out ranking evaluation, top-N recommendation and attention diagnostics."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core.errors import UnknownUserError
from .core.rng import component_rng
from .dataset import Dataset
from .model import Representations, TemporalGraphTransformer

logger = logging.getLogger(__name__)


def rank_of(scores: np.ndarray, candidates: np.ndarray, target: int) -> int:
    """1-based rank of `target` among `candidates` by descending score.

    Candidates scoring the same as the target rank ahead of it when their item id is smaller, so
    the rank does not depend on the candidate order.
    """
    position = np.flatnonzero(candidates == target)
    if position.size == 0:
        raise ValueError(f"Item {target} is not among the candidates.")
    pivot = scores[position[0]]
    ahead = (scores > pivot) | ((scores == pivot) & (candidates < target))
    return 1 + int(np.count_nonzero(ahead))


def hit_at(rank: int, cutoff: int) -> float:
    return 1.0 if rank <= cutoff else 0.0


def ndcg_at(rank: int, cutoff: int) -> float:
    """`1 / log2(rank + 1)` within the cutoff, 0 beyond it."""
    return float(1.0 / np.log2(rank + 1.0)) if rank <= cutoff else 0.0


@dataclass
class RankingReport:
    """Averaged HR@N and NDCG@N with the rank of every evaluated user.

    Attributes:
        cutoffs: The N values, ascending.
        hit_rate: HR@N per cutoff.
        ndcg: NDCG@N per cutoff.
        ranks: Rank of the held-out item per user id.
        policy: `sampled:<count>` or `full`.
        skipped: Test users without training sub-sequences.
    """

    cutoffs: tuple[int, ...]
    hit_rate: dict[int, float]
    ndcg: dict[int, float]
    ranks: dict[int, int] = field(default_factory=dict)
    policy: str = "sampled:99"
    skipped: int = 0

    @classmethod
    def from_ranks(
        cls, ranks: dict[int, int], cutoffs: Iterable[int], policy: str, skipped: int = 0
    ) -> RankingReport:
        ordered = tuple(sorted(set(cutoffs)))
        values = list(ranks.values())
        hit_rate, ndcg = {}, {}
        for n in ordered:
            hit_rate[n] = float(np.mean([hit_at(r, n) for r in values])) if values else 0.0
            ndcg[n] = float(np.mean([ndcg_at(r, n) for r in values])) if values else 0.0
        return cls(ordered, hit_rate, ndcg, dict(sorted(ranks.items())), policy, skipped)

    @property
    def users(self) -> int:
        return len(self.ranks)

    def to_tsv(self) -> str:
        lines = ["cutoff\thit_rate\tndcg\tusers\tpolicy\n"]
        for n in self.cutoffs:
            row = (n, repr(self.hit_rate[n]), repr(self.ndcg[n]), self.users, self.policy)
            lines.append("\t".join(map(str, row)) + "\n")
        return "".join(lines)

    def ranks_tsv(self, dataset: Dataset | None = None) -> str:
        lines = ["user\titem\trank\n"]
        for user, rank in self.ranks.items():
            if dataset is None:
                lines.append(f"{user}\t\t{rank}\n")
                continue
            item = dataset.item_labels[dataset.test_items[user]]
            lines.append(f"{dataset.user_labels[user]}\t{item}\t{rank}\n")
        return "".join(lines)


def final_subuser(dataset: Dataset, user: int) -> int | None:
    """Global id of the user's chronologically last sub-user, or None without training history."""
    subsequences = dataset.subsequences_by_user.get(user)
    return subsequences[-1].subuser if subsequences else None


def user_representation(reps: Representations, dataset: Dataset, user: int) -> np.ndarray:
    """Combined embedding of the user's last sub-user.

    Raises:
        UnknownUserError: If the user has no training sub-sequence in the graph.
    """
    subuser = final_subuser(dataset, user)
    if subuser is None:
        raise UnknownUserError(f"User {user} has no training history.")
    return reps.subusers.values[reps.graph.locate([subuser])[0]]  # type: ignore[no-any-return]


def sample_candidates(
    user: int,
    held_out: int,
    num_items: int,
    interacted: Iterable[int],
    count: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """The held-out item followed by up to `count` distinct items the user never targeted."""
    excluded = set(interacted) | {held_out}
    pool = np.array([j for j in range(num_items) if j not in excluded], dtype=np.int64)
    drawn = rng.choice(pool, size=min(count, pool.size), replace=False) if pool.size else pool
    return np.concatenate([[held_out], drawn]).astype(np.int64)


def _rank_users(
    users: Sequence[int],
    reps: Representations,
    dataset: Dataset,
    weight: np.ndarray,
    negatives: int,
    full_catalog: bool,
    seed: int,
) -> dict[int, int]:
    items = reps.items.values
    ranks = {}
    for user in users:
        held_out = dataset.test_items[user]
        if full_catalog:
            candidates = np.arange(dataset.num_items)
        else:
            rng = component_rng(seed, "candidates", user)
            candidates = sample_candidates(
                user, held_out, dataset.num_items, dataset.interacted.get(user, ()), negatives, rng
            )
        h = user_representation(reps, dataset, user)
        scores = (items[candidates] * h) @ weight
        ranks[user] = rank_of(scores, candidates, held_out)
    return ranks


def evaluate(
    model: TemporalGraphTransformer,
    dataset: Dataset,
    cutoffs: Iterable[int] = (5, 10, 20),
    negatives: int = 99,
    full_catalog: bool = False,
    seed: int = 0,
    workers: int = 1,
    reps: Representations | None = None,
) -> RankingReport:
    """Rank each user's held-out item under their last sub-user representation.

    Candidates are the held-out item plus `negatives` items the user never targeted, drawn per
    user from `component_rng(seed, "candidates", user)`, or the whole catalog with
    `full_catalog`. Users are split over `workers` threads; the report does not depend on the split.
    """
    reps = reps if reps is not None else model(dataset.graph())
    weight = model.params["score"].values

    evaluated = [u for u in sorted(dataset.test_items) if final_subuser(dataset, u) is not None]
    skipped = len(dataset.test_items) - len(evaluated)
    if skipped:
        logger.warning("skipped %d test users without training sub-sequences", skipped)

    chunks = [evaluated[k::workers] for k in range(workers)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(
            lambda chunk: _rank_users(
                chunk, reps, dataset, weight, negatives, full_catalog, seed
            ),
            chunks,
        )
        ranks: dict[int, int] = {}
        for part in parts:
            ranks.update(part)

    policy = "full" if full_catalog else f"sampled:{negatives}"
    report = RankingReport.from_ranks(ranks, cutoffs, policy, skipped)
    for n in report.cutoffs:
        logger.info("HR@%d %.4f NDCG@%d %.4f", n, report.hit_rate[n], n, report.ndcg[n])
    return report


def recommend(
    model: TemporalGraphTransformer,
    dataset: Dataset,
    user: int,
    count: int,
    reps: Representations | None = None,
) -> list[tuple[int, float]]:
    """Top `count` items for a user, skipping items they already targeted in training.

    Raises:
        UnknownUserError: For an unknown user or one without training history.
    """
    if not 0 <= user < dataset.num_users:
        raise UnknownUserError(f"Unknown user id {user}.")
    reps = reps if reps is not None else model(dataset.graph())
    h = user_representation(reps, dataset, user)
    scores = (reps.items.values * h) @ model.params["score"].values

    seen = dataset.training_targets.get(user, frozenset())
    candidates = [j for j in range(dataset.num_items) if j not in seen]
    ordered = sorted(candidates, key=lambda j: (-scores[j], j))
    return [(j, float(scores[j])) for j in ordered[:count]]


def export_diagnostics(reps: Representations, dataset: Dataset) -> str:
    """Behavior weights `γ` and sub-sequence weights `η` of every layer as TSV."""
    graph, state = reps.graph, reps.state
    labels = dataset.vocabulary.labels
    header = ["layer", "user", "subsequence", "eta", *(f"gamma_{label}" for label in labels)]
    lines = ["\t".join(header) + "\n"]

    ordinals = {sub.subuser: sub.ordinal for sub in dataset.subsequences}
    for layer, (gamma, eta) in enumerate(
        zip(state.behavior_weights, state.subsequence_weights), start=1
    ):
        for s in range(graph.size):
            user = dataset.user_labels[graph.owners[s]]
            ordinal = ordinals[int(graph.subusers[s])]
            weight = "" if eta is None else repr(float(eta[s]))
            row = [str(layer), user, str(ordinal), weight, *(repr(float(g)) for g in gamma[s])]
            lines.append("\t".join(row) + "\n")
    return "".join(lines)


def write_ranking_report(path: str | Path, report: RankingReport) -> None:
    Path(path).write_text(report.to_tsv(), encoding="utf-8")


def write_user_ranks(
    path: str | Path, report: RankingReport, dataset: Dataset | None = None
) -> None:
    Path(path).write_text(report.ranks_tsv(dataset), encoding="utf-8")


__all__ = [
    "RankingReport",
    "evaluate",
    "export_diagnostics",
    "hit_at",
    "ndcg_at",
    "rank_of",
    "recommend",
    "sample_candidates",
    "user_representation",
    "write_ranking_report",
    "write_user_ranks",
]
