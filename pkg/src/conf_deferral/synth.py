"""Synthetic model outputs and expert pools for desk-scale verification.

Samples are i.i.d. (hence exchangeable), so conformal coverage must hold
empirically on generated data. Expert pools mix generalists with
block-specialists; model confusions can be steered into those blocks so
that moderate-miscoverage prediction sets land inside a specialist's
home turf.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .dataio import AnnotationStore, ProbabilityTable
from .experts import ExpertRecord


@dataclass(frozen=True)
class Generalist:
    """Uniform per-class accuracy."""

    accuracy: float
    coverage: float = 1.0
    cost: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError("accuracy must be in [0, 1]")
        if not 0.0 < self.coverage <= 1.0:
            raise ValueError("coverage must be in (0, 1]")

    def accuracy_for(self, label: int) -> float:
        return self.accuracy


@dataclass(frozen=True)
class Specialist:
    """High accuracy inside a class block, lower outside."""

    block: tuple[int, ...]
    inside_accuracy: float
    outside_accuracy: float
    coverage: float = 1.0
    cost: float = 1.0

    def __post_init__(self) -> None:
        if not self.block:
            raise ValueError("specialist block must be non-empty")
        for acc in (self.inside_accuracy, self.outside_accuracy):
            if not 0.0 <= acc <= 1.0:
                raise ValueError("accuracies must be in [0, 1]")
        if not 0.0 < self.coverage <= 1.0:
            raise ValueError("coverage must be in (0, 1]")

    def accuracy_for(self, label: int) -> float:
        return self.inside_accuracy if label in self.block else self.outside_accuracy


ExpertSpec = Union[Generalist, Specialist]


@dataclass(frozen=True)
class SynthConfig:
    """Generator configuration.

    ``confusion_sharpness`` is the Dirichlet concentration used to split
    off-target probability mass: small values pile it on few classes,
    large values spread it evenly. When ``confusable_blocks`` is set,
    wrong argmaxes stay inside the true class's block and ``block_mass``
    of the off-target mass goes to the other block members.
    """

    n_classes: int
    n_samples: int
    model_target_accuracy: float
    confusion_sharpness: float
    experts: tuple[ExpertSpec, ...]
    seed: int
    confusable_blocks: tuple[tuple[int, ...], ...] | None = None
    block_mass: float = 0.85

    def __post_init__(self) -> None:
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.n_samples < self.n_classes:
            raise ValueError("need at least as many samples as classes")
        if not 1.0 / self.n_classes < self.model_target_accuracy <= 1.0:
            raise ValueError("model_target_accuracy must be in (1/C, 1]")
        if self.confusion_sharpness <= 0:
            raise ValueError("confusion_sharpness must be positive")
        if not self.experts:
            raise ValueError("need at least one expert")
        if self.confusable_blocks is not None:
            for block in self.confusable_blocks:
                if any(not 0 <= c < self.n_classes for c in block):
                    raise ValueError("block class out of range")
        for spec in self.experts:
            if isinstance(spec, Specialist) and any(
                not 0 <= c < self.n_classes for c in spec.block
            ):
                raise ValueError("specialist block class out of range")


def theoretical_expert_accuracy(spec: ExpertSpec, n_classes: int) -> float:
    """Exact expected accuracy under uniform true labels."""
    if isinstance(spec, Generalist):
        return spec.accuracy
    k = len(spec.block)
    return (k * spec.inside_accuracy + (n_classes - k) * spec.outside_accuracy) / n_classes


def _block_of(label: int, blocks: tuple[tuple[int, ...], ...] | None) -> tuple[int, ...] | None:
    if blocks is None:
        return None
    for block in blocks:
        if label in block:
            return block
    return None


def _pick(options: np.ndarray, u: float) -> int:
    return int(options[min(int(u * options.size), options.size - 1)])


def gen_dataset(cfg: SynthConfig) -> tuple[ProbabilityTable, AnnotationStore]:
    """Generate a probability table and matching annotation store.

    Truths are uniform over classes. Each probability vector puts its
    largest mass (drawn from U(0.55, 0.95)) on the true class with
    probability ``model_target_accuracy`` and on a uniformly random wrong
    class otherwise; the remainder is split by a concentration-controlled
    random allocation. Expert annotations are correct with the expert's
    per-class accuracy, errors uniform over the wrong classes. Every
    sample is guaranteed at least one annotator. Fully deterministic
    under the seed: all randomness comes from one sequential stream with
    fixed-size draws.
    """
    C = cfg.n_classes
    n = cfg.n_samples
    acc = min(cfg.model_target_accuracy, 1.0 - 1e-9)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))

    truths = rng.integers(0, C, size=n)
    hit = rng.random(n) < acc
    top = rng.uniform(0.55, 0.95, size=n)
    wrong_u = rng.random(n)
    gamma = rng.gamma(cfg.confusion_sharpness, 1.0, size=(n, C - 1))

    all_classes = np.arange(C)
    probs = np.zeros((n, C), dtype=np.float64)
    for i in range(n):
        t = int(truths[i])
        block = _block_of(t, cfg.confusable_blocks)
        if hit[i]:
            target = t
        else:
            in_block = (
                np.array([c for c in block if c != t], dtype=np.int64)
                if block is not None
                else np.empty(0, dtype=np.int64)
            )
            options = in_block if in_block.size else all_classes[all_classes != t]
            target = _pick(options, wrong_u[i])
        rest = all_classes[all_classes != target]
        weights = gamma[i].copy()
        weights[weights <= 0] = 1e-12
        off_mass = 1.0 - top[i]
        if block is not None:
            # The truth stays in the heavy group when a block neighbour
            # took the argmax, so moderate-alpha sets still cover it.
            inside = np.isin(rest, block)
            if inside.any() and (~inside).any():
                w_in = weights * inside
                w_out = weights * ~inside
                alloc = (
                    cfg.block_mass * off_mass * w_in / w_in.sum()
                    + (1.0 - cfg.block_mass) * off_mass * w_out / w_out.sum()
                )
            else:
                alloc = off_mass * weights / weights.sum()
        else:
            alloc = off_mass * weights / weights.sum()
        probs[i, target] = top[i]
        probs[i, rest] = alloc

    sample_ids = tuple(f"s{i:06d}" for i in range(n))
    table = ProbabilityTable(sample_ids=sample_ids, truths=truths, probs=probs)

    K = len(cfg.experts)
    masks = np.zeros((K, n), dtype=bool)
    for k, spec in enumerate(cfg.experts):
        masks[k] = rng.random(n) < spec.coverage
    fix_u = rng.random(n)
    uncovered = np.nonzero(~masks.any(axis=0))[0]
    for i in uncovered:
        masks[min(int(fix_u[i] * K), K - 1), i] = True

    records: list[ExpertRecord] = []
    for k, spec in enumerate(cfg.experts):
        expert_id = f"expert_{k:02d}"
        correct_u = rng.random(n)
        err_u = rng.random(n)
        for i in np.nonzero(masks[k])[0]:
            t = int(truths[i])
            if correct_u[i] < spec.accuracy_for(t):
                label = t
            else:
                slot = min(int(err_u[i] * (C - 1)), C - 2)
                label = slot if slot < t else slot + 1
            records.append(ExpertRecord(expert_id, sample_ids[i], int(label)))
    return table, AnnotationStore(records=tuple(records))


def canonical_scenario(seed: int, n_samples: int = 900) -> SynthConfig:
    """Desk-scale specialist scenario.

    One strong generalist plus three block specialists on disjoint
    confusable blocks; model confusions are steered into the blocks so
    segregativity-based routing has something to find. Full coverage
    keeps every sample annotated even when the expert pool is cut down.
    """
    blocks = ((0, 1, 2), (3, 4, 5), (6, 7, 8))
    experts: tuple[ExpertSpec, ...] = (
        Generalist(accuracy=0.95),
        Specialist(block=blocks[0], inside_accuracy=0.99, outside_accuracy=0.3),
        Specialist(block=blocks[1], inside_accuracy=0.99, outside_accuracy=0.3),
        Specialist(block=blocks[2], inside_accuracy=0.99, outside_accuracy=0.3),
    )
    return SynthConfig(
        n_classes=9,
        n_samples=n_samples,
        model_target_accuracy=0.82,
        confusion_sharpness=0.5,
        experts=experts,
        seed=seed,
        confusable_blocks=blocks,
    )
