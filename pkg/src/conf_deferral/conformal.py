"""Split-conformal prediction sets over probability-vector classifiers.

Implements three nonconformity scores (LAC, APS, RAPS), finite-sample
calibration of the score threshold, and prediction-set construction.
The cumulative scores (APS, RAPS) force-include the threshold-crossing
label so their sets are never empty; LAC sets may be empty.

Scores are deterministic: probability ties are broken toward the lower
class index so repeated runs produce identical sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Sequence

import numpy as np

# |sum - 1| <= SUM_TOLERANCE passes as-is; drift up to RENORM_TOLERANCE is
# divided out; anything larger is rejected.
SUM_TOLERANCE = 1e-6
RENORM_TOLERANCE = 1e-3


class ScoreKind(str, Enum):
    """Nonconformity score family."""

    LAC = "lac"
    APS = "aps"
    RAPS = "raps"


@dataclass(frozen=True)
class RapsParams:
    """Rank-penalty parameters for the RAPS score.

    ``k_reg`` is the rank offset below which no penalty applies and
    ``lam`` is the per-rank penalty weight.
    """

    k_reg: int
    lam: float

    def __post_init__(self) -> None:
        if self.k_reg < 0 or int(self.k_reg) != self.k_reg:
            raise ValueError(f"k_reg must be a non-negative integer, got {self.k_reg}")
        if not math.isfinite(self.lam) or self.lam < 0:
            raise ValueError(f"lambda must be finite and >= 0, got {self.lam}")


# Default tuning grid: k_reg x lambda candidates swept by tune_raps.
DEFAULT_RAPS_GRID: tuple[RapsParams, ...] = tuple(
    RapsParams(k_reg=k, lam=lam) for k in (1, 2, 3, 5) for lam in (0.001, 0.01, 0.1, 0.5)
)


@dataclass(frozen=True)
class ConformalThreshold:
    """Calibrated score threshold.

    ``tau`` may be ``math.inf`` when the finite-sample rank exceeds the
    calibration size (every label is then admitted). ``n_classes`` is
    recorded when known so set construction can reject dimension
    mismatches.
    """

    tau: float
    alpha: float
    n_cal: int
    score_kind: ScoreKind
    n_classes: int | None = None


@dataclass(frozen=True)
class PredictionSet:
    """Set of plausible class labels at miscoverage ``alpha``.

    Labels are ordered: by decreasing probability for APS/RAPS, by
    ascending class index for LAC.
    """

    labels: tuple[int, ...]
    alpha: float

    def __post_init__(self) -> None:
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("duplicate labels in prediction set")

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label: int) -> bool:
        return label in self.labels

    def __iter__(self) -> Iterator[int]:
        return iter(self.labels)


def check_prob_vector(p: Sequence[float] | np.ndarray) -> tuple[np.ndarray, bool]:
    """Validate a probability vector.

    Returns the validated float64 vector and whether it was renormalized.
    Raises ``ValueError`` for negative entries, fewer than two classes, or
    a sum further than ``RENORM_TOLERANCE`` from one.
    """
    vec = np.asarray(p, dtype=np.float64)
    if vec.ndim != 1 or vec.size < 2:
        raise ValueError("probability vector must be 1-D with at least 2 classes")
    if np.any(vec < 0) or not np.all(np.isfinite(vec)):
        raise ValueError("probability entries must be finite and >= 0")
    total = float(vec.sum())
    drift = abs(total - 1.0)
    if drift <= SUM_TOLERANCE:
        return vec, False
    if drift <= RENORM_TOLERANCE:
        return vec / total, True
    raise ValueError(f"probabilities sum to {total:.6g}, beyond tolerance {RENORM_TOLERANCE}")


def _check_label(y: int, n_classes: int) -> None:
    if not 0 <= y < n_classes:
        raise ValueError(f"label {y} out of range [0, {n_classes})")


def rank_order(p: np.ndarray) -> np.ndarray:
    """Class indices sorted by decreasing probability, ties toward the
    lower class index."""
    return np.argsort(-np.asarray(p), kind="stable")


def score_lac(p: Sequence[float] | np.ndarray, y: int) -> float:
    """LAC nonconformity: one minus the probability assigned to ``y``."""
    vec, _ = check_prob_vector(p)
    _check_label(y, vec.size)
    return float(1.0 - vec[y])


def score_aps(p: Sequence[float] | np.ndarray, y: int) -> float:
    """APS nonconformity: cumulative sorted probability through ``y``.

    Deterministic (non-randomized) variant: the full mass of every label
    ranked at or above ``y`` is counted, including ``y``'s own mass.
    """
    vec, _ = check_prob_vector(p)
    _check_label(y, vec.size)
    order = rank_order(vec)
    pos = int(np.nonzero(order == y)[0][0])
    return float(vec[order[: pos + 1]].sum())


def score_raps(p: Sequence[float] | np.ndarray, y: int, params: RapsParams) -> float:
    """RAPS nonconformity: APS plus a penalty on ranks beyond ``k_reg``."""
    vec, _ = check_prob_vector(p)
    _check_label(y, vec.size)
    order = rank_order(vec)
    pos = int(np.nonzero(order == y)[0][0])
    rank = pos + 1
    return float(vec[order[:rank]].sum()) + params.lam * max(0, rank - params.k_reg)


def conformal_rank(n: int, alpha: float) -> int:
    """Finite-sample rank ceil((n+1)(1-alpha)), guarded against float
    error so thousandth-grid alphas hit exact integer ranks."""
    v = (n + 1) * (1.0 - alpha)
    nearest = round(v)
    k = nearest if abs(v - nearest) < 1e-9 else math.ceil(v)
    return max(int(k), 1)


def calibrate(
    cal_scores: Sequence[float] | np.ndarray,
    alpha: float,
    score_kind: ScoreKind,
    n_classes: int | None = None,
) -> ConformalThreshold:
    """Compute the conformal threshold from calibration scores.

    The threshold is the k-th smallest score with k = ceil((n+1)(1-alpha));
    when k exceeds n the threshold is +infinity and every label is admitted.
    """
    scores = np.asarray(cal_scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("calibration scores must be non-empty")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    n = scores.size
    k = conformal_rank(n, alpha)
    if k > n:
        tau = math.inf
    else:
        tau = float(np.partition(scores, k - 1)[k - 1])
    return ConformalThreshold(
        tau=tau, alpha=alpha, n_cal=int(n), score_kind=score_kind, n_classes=n_classes
    )


def predict_set(
    p: Sequence[float] | np.ndarray,
    thr: ConformalThreshold,
    params: RapsParams | None = None,
) -> PredictionSet:
    """Build the prediction set for one probability vector.

    LAC admits every label whose score is at or below the threshold and
    may return an empty set. APS/RAPS walk labels in decreasing-probability
    order, admit while the cumulative score stays at or below the
    threshold, then additionally include the first label that crosses it,
    so their sets are never empty.
    """
    vec, _ = check_prob_vector(p)
    if thr.n_classes is not None and vec.size != thr.n_classes:
        raise ValueError(
            f"probability vector has {vec.size} classes, threshold was "
            f"calibrated for {thr.n_classes}"
        )
    if (params is not None) != (thr.score_kind is ScoreKind.RAPS):
        raise ValueError("params must be given exactly when score_kind is RAPS")

    if thr.score_kind is ScoreKind.LAC:
        labels = np.nonzero(1.0 - vec <= thr.tau)[0]
        return PredictionSet(labels=tuple(int(v) for v in labels), alpha=thr.alpha)

    order = rank_order(vec)
    cum = np.cumsum(vec[order])
    if thr.score_kind is ScoreKind.RAPS:
        assert params is not None
        ranks = np.arange(1, vec.size + 1)
        cum = cum + params.lam * np.maximum(0, ranks - params.k_reg)
    admitted = int(np.searchsorted(cum, thr.tau, side="right"))
    size = min(admitted + 1, vec.size)
    return PredictionSet(labels=tuple(int(v) for v in order[:size]), alpha=thr.alpha)


def true_label_scores(
    probs: np.ndarray,
    labels: np.ndarray,
    score_kind: ScoreKind,
    params: RapsParams | None = None,
) -> np.ndarray:
    """Vectorized nonconformity score of each row's true label.

    ``probs`` is an (n, C) matrix of already-validated probability
    vectors; ``labels`` the matching true class indices.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    n = probs.shape[0]
    if score_kind is ScoreKind.LAC:
        return 1.0 - probs[np.arange(n), labels]
    order = np.argsort(-probs, axis=1, kind="stable")
    sorted_p = np.take_along_axis(probs, order, axis=1)
    cum = np.cumsum(sorted_p, axis=1)
    if score_kind is ScoreKind.RAPS:
        if params is None:
            raise ValueError("RAPS scores need params")
        ranks = np.arange(1, probs.shape[1] + 1)
        cum = cum + params.lam * np.maximum(0, ranks - params.k_reg)
    pos = np.argmax(order == labels[:, None], axis=1)
    return cum[np.arange(n), pos]


class SetBuilder:
    """Batch prediction-set construction over a fixed probability matrix.

    Precomputes per-row sort orders and cumulative scores once so that
    set sizes and members for many thresholds come out of cheap lookups.
    Produces exactly the same sets as ``predict_set`` row by row.
    """

    def __init__(
        self,
        probs: np.ndarray,
        score_kind: ScoreKind,
        params: RapsParams | None = None,
    ) -> None:
        if (params is not None) != (score_kind is ScoreKind.RAPS):
            raise ValueError("params must be given exactly when score_kind is RAPS")
        self.score_kind = score_kind
        self.params = params
        self._probs = np.asarray(probs, dtype=np.float64)
        self.n_rows, self.n_classes = self._probs.shape
        self._order = np.argsort(-self._probs, axis=1, kind="stable")
        if score_kind is ScoreKind.LAC:
            self._rank_scores = None
        else:
            cum = np.cumsum(np.take_along_axis(self._probs, self._order, axis=1), axis=1)
            if score_kind is ScoreKind.RAPS:
                assert params is not None
                ranks = np.arange(1, self.n_classes + 1)
                cum = cum + params.lam * np.maximum(0, ranks - params.k_reg)
            self._rank_scores = cum

    def model_labels(self) -> np.ndarray:
        """Argmax label per row (ties toward the lower class index)."""
        return self._order[:, 0].copy()

    def sizes(self, tau: float) -> np.ndarray:
        """Prediction-set size per row at threshold ``tau``."""
        if self.score_kind is ScoreKind.LAC:
            return np.count_nonzero(1.0 - self._probs <= tau, axis=1)
        admitted = np.count_nonzero(self._rank_scores <= tau, axis=1)
        return np.minimum(admitted + 1, self.n_classes)

    def labels_for(self, row: int, tau: float) -> tuple[int, ...]:
        """Member labels of row ``row``'s set at threshold ``tau``."""
        if self.score_kind is ScoreKind.LAC:
            hit = np.nonzero(1.0 - self._probs[row] <= tau)[0]
            return tuple(int(v) for v in hit)
        admitted = int(np.searchsorted(self._rank_scores[row], tau, side="right"))
        size = min(admitted + 1, self.n_classes)
        return tuple(int(v) for v in self._order[row, :size])


def tune_raps(
    probs: np.ndarray,
    labels: np.ndarray,
    alpha: float,
    grid: Sequence[RapsParams] = DEFAULT_RAPS_GRID,
) -> RapsParams:
    """Pick RAPS parameters on a held-out tuning subset.

    The tuning rows are split in half: the first ceil(n/2) calibrate a
    threshold per candidate, the rest receive prediction sets. Among
    candidates whose empirical coverage reaches 1-alpha the one with the
    smallest mean set size wins; ties break toward smaller lambda, then
    smaller k_reg. If no candidate reaches the coverage target, the one
    with the highest coverage wins under the same tie rules.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if len(grid) == 0:
        raise ValueError("tuning grid must be non-empty")
    n = probs.shape[0]
    if n < 4:
        raise ValueError(f"tuning subset must have at least 4 samples, got {n}")
    n_fit = (n + 1) // 2
    fit_probs, fit_labels = probs[:n_fit], labels[:n_fit]
    eval_probs, eval_labels = probs[n_fit:], labels[n_fit:]

    covered_rows: list[tuple[float, float, RapsParams]] = []
    fallback_rows: list[tuple[float, float, RapsParams]] = []
    for cand in grid:
        scores = true_label_scores(fit_probs, fit_labels, ScoreKind.RAPS, cand)
        thr = calibrate(scores, alpha, ScoreKind.RAPS)
        builder = SetBuilder(eval_probs, ScoreKind.RAPS, cand)
        sizes = builder.sizes(thr.tau)
        # Sets are rank prefixes, so the truth is covered exactly when its
        # rank position falls inside the set.
        order = np.argsort(-eval_probs, axis=1, kind="stable")
        pos = np.argmax(order == eval_labels[:, None], axis=1)
        coverage = float(np.mean(pos + 1 <= sizes))
        mean_size = float(np.mean(sizes))
        if coverage >= 1.0 - alpha:
            covered_rows.append((mean_size, coverage, cand))
        fallback_rows.append((mean_size, coverage, cand))

    def key(row: tuple[float, float, RapsParams]) -> tuple[float, float, int]:
        return (row[0], row[2].lam, row[2].k_reg)

    if covered_rows:
        return min(covered_rows, key=key)[2]
    return min(fallback_rows, key=lambda r: (-r[1], r[0], r[2].lam, r[2].k_reg))[2]
