"""Expert evidence, confusion matrices, segregativity, and selection.

An expert's segregativity over a label set is their accuracy restricted
to evidence records whose prediction and truth both fall inside the set,
i.e. the accuracy of the confusion sub-matrix indexed by the set. It is
``None`` (undefined) when the expert has no such records.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np


@dataclass(frozen=True)
class ExpertRecord:
    """One recorded expert annotation."""

    expert_id: str
    sample_id: str
    predicted_label: int


class ConfusionMatrix:
    """C x C integer count matrix; rows are true labels, columns predictions."""

    __slots__ = ("counts", "n_total")

    def __init__(self, counts: np.ndarray) -> None:
        counts = np.asarray(counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError("confusion counts must be a square matrix")
        if np.any(counts < 0):
            raise ValueError("confusion counts must be non-negative")
        self.counts = counts.astype(np.int64, copy=True)
        self.n_total = int(self.counts.sum())

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    def trace(self) -> int:
        return int(np.trace(self.counts))


def build_confusion(
    records: Iterable[ExpertRecord],
    truths: Mapping[str, int],
    n_classes: int,
    exclude: str | None = None,
) -> ConfusionMatrix:
    """Tally records into a confusion matrix.

    ``exclude`` skips every record for that sample id (leave-one-out).
    Raises if a record's sample has no truth or a label is out of range.
    """
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    for rec in records:
        if rec.sample_id == exclude:
            continue
        if rec.sample_id not in truths:
            raise ValueError(f"no truth for sample {rec.sample_id!r}")
        y = truths[rec.sample_id]
        if not 0 <= y < n_classes:
            raise ValueError(f"truth {y} out of range for sample {rec.sample_id!r}")
        if not 0 <= rec.predicted_label < n_classes:
            raise ValueError(
                f"prediction {rec.predicted_label} out of range for sample {rec.sample_id!r}"
            )
        counts[y, rec.predicted_label] += 1
    return ConfusionMatrix(counts)


def segregativity(cm: ConfusionMatrix, label_set: Iterable[int]) -> float | None:
    """Accuracy of the confusion sub-matrix indexed by ``label_set``.

    Returns ``None`` when the sub-matrix holds no records.
    """
    labels = np.fromiter(label_set, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= cm.n_classes):
        raise ValueError("label set outside matrix range")
    sub = cm.counts[np.ix_(labels, labels)]
    total = int(sub.sum())
    if total == 0:
        return None
    return int(np.trace(sub)) / total


@dataclass(frozen=True)
class ExpertProfile:
    """Immutable per-expert evidence summary.

    ``overall_accuracy`` is the confusion trace over the total count; an
    expert with no evidence at all scores 0.0 so it is only ever chosen
    when nothing better exists.
    """

    expert_id: str
    confusion: ConfusionMatrix
    cost: float = 1.0
    overall_accuracy: float = field(init=False)

    def __post_init__(self) -> None:
        n = self.confusion.n_total
        acc = self.confusion.trace() / n if n else 0.0
        object.__setattr__(self, "overall_accuracy", acc)

    def segregativity_over(self, labels: Sequence[int]) -> float | None:
        return segregativity(self.confusion, labels)


class ProfileLike(Protocol):
    """What expert selection needs from a profile."""

    expert_id: str
    cost: float
    overall_accuracy: float

    def segregativity_over(self, labels: Sequence[int]) -> float | None: ...


class TieRule(str, Enum):
    RANDOM = "random"
    LEAST_COST = "cost"


def _break_ties(
    tied: list[ProfileLike], tie_rule: TieRule, rng: np.random.Generator
) -> str:
    if len(tied) == 1:
        return tied[0].expert_id
    if tie_rule is TieRule.RANDOM:
        ordered = sorted(tied, key=lambda pr: pr.expert_id)
        return ordered[int(rng.integers(len(ordered)))].expert_id
    return min(tied, key=lambda pr: (pr.cost, pr.expert_id)).expert_id


def select_expert(
    profiles: Sequence[ProfileLike],
    label_set: Iterable[int],
    tie_rule: TieRule,
    rng: np.random.Generator,
) -> str:
    """Pick the expert with maximal segregativity over ``label_set``.

    An empty label set scores every expert by overall accuracy (the full
    evidence set stands in for the sub-matrix). Experts with undefined
    segregativity are excluded; when all are undefined the overall-accuracy
    fallback applies to everyone. Score ties break per ``tie_rule``:
    uniformly at random, or by least cost then lexicographic expert id.
    """
    if not profiles:
        raise ValueError("no expert profiles to select from")
    labels = tuple(label_set)
    scored: list[tuple[float, ProfileLike]] = []
    if labels:
        for pr in profiles:
            s = pr.segregativity_over(labels)
            if s is not None:
                scored.append((s, pr))
    if not scored:
        scored = [(pr.overall_accuracy, pr) for pr in profiles]
    best = max(s for s, _ in scored)
    tied = [pr for s, pr in scored if s == best]
    return _break_ties(tied, tie_rule, rng)


def select_by_accuracy(
    profiles: Sequence[ProfileLike], tie_rule: TieRule, rng: np.random.Generator
) -> str:
    """Pick the expert with maximal overall accuracy (ties per rule).

    Equivalent to segregativity selection over the full label set.
    """
    if not profiles:
        raise ValueError("no expert profiles to select from")
    best = max(pr.overall_accuracy for pr in profiles)
    tied = [pr for pr in profiles if pr.overall_accuracy == best]
    return _break_ties(tied, tie_rule, rng)
