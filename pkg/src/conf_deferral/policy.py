"""Per-input deferral decisions and replay resolution.

A deferring strategy accepts the model's label when the prediction set is
a singleton and otherwise routes the input to an expert; the always-defer
baselines skip the set entirely, and the model-only baseline never defers.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .conformal import ConformalThreshold, PredictionSet, RapsParams, predict_set
from .experts import ProfileLike, TieRule, select_by_accuracy, select_expert


class Strategy(str, Enum):
    SEGREGATIVITY = "segregativity"
    NAIVE_MOST_ACCURATE = "naive_most_accurate"
    NAIVE_RANDOM = "naive_random"
    MODEL_ONLY = "model_only"
    BEST_EXPERT = "best_expert"
    RANDOM_EXPERT = "random_expert"


# Strategies that defer exactly when the prediction set is not a singleton.
SET_GATED_STRATEGIES = (
    Strategy.SEGREGATIVITY,
    Strategy.NAIVE_MOST_ACCURATE,
    Strategy.NAIVE_RANDOM,
)

ALWAYS_DEFER_STRATEGIES = (Strategy.BEST_EXPERT, Strategy.RANDOM_EXPERT)


@dataclass(frozen=True)
class Decision:
    """What to do with one input.

    ``expert_id`` is ``None`` when the model's label is accepted; the
    label is then the sole set member. Deferred decisions carry no label
    (the expert's recorded annotation supplies it at resolution time).
    ``set_size`` is the prediction-set size consulted, 0 when no set was
    built (always-defer baselines) or the LAC set came out empty.
    """

    expert_id: str | None
    label: int | None
    set_size: int

    @property
    def deferred(self) -> bool:
        return self.expert_id is not None


@dataclass(frozen=True)
class Outcome:
    final_label: int
    correct: bool
    queried_expert: str | None


class NoEligibleExpertError(RuntimeError):
    """Deferral required but no candidate expert holds an annotation."""


def _require_candidates(candidates: Sequence[ProfileLike]) -> None:
    if not candidates:
        raise NoEligibleExpertError("deferral required but no eligible expert")


def decide(
    p: np.ndarray,
    thr: ConformalThreshold | None,
    candidates: Sequence[ProfileLike],
    strategy: Strategy,
    tie_rule: TieRule,
    rng: np.random.Generator,
    params: RapsParams | None = None,
    label_set: PredictionSet | None = None,
) -> Decision:
    """Decide between the model and an expert for one input.

    ``label_set`` may carry a precomputed prediction set; otherwise one is
    built from ``p`` and ``thr``. Model-only answers with the argmax;
    best-expert and random-expert always defer (highest overall accuracy /
    uniform pick); the set-gated strategies accept a singleton set's label
    and otherwise select by segregativity, estimated overall accuracy, or
    uniformly at random.
    """
    if strategy is Strategy.MODEL_ONLY:
        label = int(np.argmax(p))
        return Decision(expert_id=None, label=label, set_size=1)

    if strategy in ALWAYS_DEFER_STRATEGIES:
        _require_candidates(candidates)
        if strategy is Strategy.BEST_EXPERT:
            chosen = select_by_accuracy(candidates, tie_rule, rng)
        else:
            ordered = sorted(candidates, key=lambda pr: pr.expert_id)
            chosen = ordered[int(rng.integers(len(ordered)))].expert_id
        return Decision(expert_id=chosen, label=None, set_size=0)

    if label_set is not None:
        gamma = label_set
    else:
        if thr is None:
            raise ValueError("set-gated strategies need a threshold or a precomputed set")
        gamma = predict_set(p, thr, params)
    if len(gamma) == 1:
        return Decision(expert_id=None, label=gamma.labels[0], set_size=1)

    _require_candidates(candidates)
    if strategy is Strategy.SEGREGATIVITY:
        chosen = select_expert(candidates, gamma.labels, tie_rule, rng)
    elif strategy is Strategy.NAIVE_MOST_ACCURATE:
        chosen = select_by_accuracy(candidates, tie_rule, rng)
    else:  # NAIVE_RANDOM
        ordered = sorted(candidates, key=lambda pr: pr.expert_id)
        chosen = ordered[int(rng.integers(len(ordered)))].expert_id
    return Decision(expert_id=chosen, label=None, set_size=len(gamma))


def resolve(
    decision: Decision, annotations: Mapping[str, int], truth: int
) -> Outcome:
    """Replay a decision against recorded annotations.

    The final label is the model's accepted label or the chosen expert's
    recorded annotation; a deferred decision with no recorded annotation
    is an error.
    """
    if decision.expert_id is None:
        assert decision.label is not None
        return Outcome(
            final_label=decision.label,
            correct=decision.label == truth,
            queried_expert=None,
        )
    if decision.expert_id not in annotations:
        raise KeyError(f"no recorded annotation from expert {decision.expert_id!r}")
    label = annotations[decision.expert_id]
    return Outcome(final_label=label, correct=label == truth, queried_expert=decision.expert_id)
