"""Benchmark machinery: splits, miscoverage sweeps, metrics, significance.

A sweep evaluates every requested strategy over a grid of miscoverage
levels on several calibration/test splits, replaying recorded expert
annotations. Expert profiles are leave-one-out: the current test
sample's annotations never inform its own routing. Everything is
deterministic under the master seed, independent of worker count: each
(split, alpha, strategy) task draws from its own derived random stream.
"""

from __future__ import annotations

import math
import warnings
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .conformal import (
    DEFAULT_RAPS_GRID,
    PredictionSet,
    RapsParams,
    ScoreKind,
    SetBuilder,
    calibrate,
    true_label_scores,
    tune_raps,
)
from .dataio import AnnotationStore, ProbabilityTable, RunResult
from .experts import ExpertRecord, TieRule
from .policy import (
    ALWAYS_DEFER_STRATEGIES,
    SET_GATED_STRATEGIES,
    NoEligibleExpertError,
    Outcome,
    Strategy,
    decide,
    resolve,
)
from .stats import paired_t_one_tailed, shapiro_wilk, wilcoxon_one_tailed

# Stream tags keep every consumer of randomness on its own derived seed.
_STREAM_SPLIT = 0
_STREAM_TUNE = 1
_STREAM_SHOTS = 2
_STREAM_DECIDE = 3

_STRATEGY_ID = {s: i for i, s in enumerate(Strategy)}

STAR_THRESHOLDS = (0.05, 0.01, 0.001, 0.0001)

# Fraction of the calibration set held out for RAPS parameter tuning.
RAPS_TUNING_FRACTION = 0.2


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(key)))


def _ceil_guarded(v: float) -> int:
    """ceil with protection against float drift just above an integer."""
    nearest = round(v)
    return int(nearest) if abs(v - nearest) < 1e-9 else math.ceil(v)


@dataclass(frozen=True)
class SplitSpec:
    """One calibration/test partition, derived from (seed, split_index)."""

    seed: int
    cal_size: int = 1000
    split_index: int = 0


@dataclass(frozen=True)
class RunConfig:
    """Everything one sweep needs."""

    table: ProbabilityTable
    store: AnnotationStore
    score_kind: ScoreKind
    alphas: tuple[float, ...]
    strategies: tuple[Strategy, ...] = tuple(Strategy)
    tie_rule: TieRule = TieRule.RANDOM
    master_seed: int = 0
    n_splits: int = 20
    cal_size: int = 1000
    shots: int | None = None
    raps_grid: tuple[RapsParams, ...] = DEFAULT_RAPS_GRID
    raps_tuning_alpha: float = 0.1
    jobs: int = 1

    def __post_init__(self) -> None:
        if not self.alphas:
            raise ValueError("alpha grid must be non-empty")
        if any(not 0.0 < a < 1.0 for a in self.alphas):
            raise ValueError("alphas must lie in (0, 1)")
        if any(b <= a for a, b in zip(self.alphas, self.alphas[1:])):
            raise ValueError("alphas must be strictly increasing")
        if not self.strategies:
            raise ValueError("need at least one strategy")
        if self.n_splits < 1:
            raise ValueError("need at least one split")
        if self.shots is not None and self.shots < 1:
            raise ValueError("shots must be >= 1")


def alpha_grid(model_accuracy: float) -> tuple[float, ...]:
    """Miscoverage grid: thousandths up to 1 - model accuracy, then
    hundredths up to 0.99."""
    if model_accuracy <= 0.001 or model_accuracy >= 0.999:
        raise ValueError(f"model_accuracy must be in (0.001, 0.999), got {model_accuracy}")
    fine_end = round((1.0 - model_accuracy) * 1000)
    values = [i / 1000 for i in range(1, fine_end + 1)]
    coarse_start = (fine_end // 10 + 1) * 10
    values += [i / 1000 for i in range(coarse_start, 991, 10)]
    return tuple(values)


def stratified_split(table: ProbabilityTable, spec: SplitSpec) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Partition sample ids into a stratified calibration set and the rest.

    Calibration slots are allocated per class proportionally to class
    frequency (largest-remainder rounding, ties toward the lower class),
    then filled by seeded sampling without replacement. Both returned id
    tuples follow table order, and the partition is a pure function of
    (seed, split_index).
    """
    n = table.n_samples
    C = table.n_classes
    if spec.cal_size >= n:
        raise ValueError(f"cal_size {spec.cal_size} must leave a non-empty test set (n={n})")
    class_rows = [np.nonzero(table.truths == c)[0] for c in range(C)]
    if any(rows.size == 0 for rows in class_rows):
        raise ValueError("every class needs at least one sample")
    if spec.cal_size < C:
        raise ValueError(f"cal_size {spec.cal_size} below class count {C}")

    quotas = [spec.cal_size * rows.size / n for rows in class_rows]
    alloc = [int(math.floor(q)) for q in quotas]
    leftover = spec.cal_size - sum(alloc)
    order = sorted(range(C), key=lambda c: (-(quotas[c] - alloc[c]), c))
    for c in order[:leftover]:
        alloc[c] += 1

    rng = _rng(spec.seed, _STREAM_SPLIT, spec.split_index)
    cal_mask = np.zeros(n, dtype=bool)
    for c in range(C):
        rows = class_rows[c]
        chosen = rng.permutation(rows.size)[: alloc[c]]
        cal_mask[rows[chosen]] = True
    cal_ids = tuple(sid for i, sid in enumerate(table.sample_ids) if cal_mask[i])
    test_ids = tuple(sid for i, sid in enumerate(table.sample_ids) if not cal_mask[i])
    return cal_ids, test_ids


class ExpertKnowledge:
    """Per-expert count matrices with O(1) leave-one-out views.

    Selection knowledge may be restricted (n-shot subsampling) while
    candidate eligibility and replay always use the full store. Sub-matrix
    sums are cached per (expert, label set) on the global matrices;
    leave-one-out views subtract the single excluded record on the fly.
    """

    def __init__(
        self,
        store: AnnotationStore,
        table: ProbabilityTable,
        selection_records: Sequence | None = None,
    ) -> None:
        self.store = store
        self.table = table
        C = table.n_classes
        records = store.records if selection_records is None else selection_records
        self._counts: dict[str, np.ndarray] = {}
        self._trace: dict[str, int] = {}
        self._total: dict[str, int] = {}
        self._known: dict[tuple[str, str], tuple[int, int]] = {}
        for rec in records:
            counts = self._counts.get(rec.expert_id)
            if counts is None:
                counts = self._counts[rec.expert_id] = np.zeros((C, C), dtype=np.int64)
            truth = table.truth_of(rec.sample_id)
            counts[truth, rec.predicted_label] += 1
            self._known[(rec.expert_id, rec.sample_id)] = (truth, rec.predicted_label)
        for expert_id, counts in self._counts.items():
            self._trace[expert_id] = int(np.trace(counts))
            self._total[expert_id] = int(counts.sum())
        self._sub_cache: dict[tuple[str, tuple[int, ...]], tuple[int, int]] = {}
        self._empty = np.zeros((C, C), dtype=np.int64)

    def candidates(self, sample_id: str) -> tuple[str, ...]:
        return self.store.annotators_of(sample_id)

    def _sub_sums(self, expert_id: str, labels: tuple[int, ...]) -> tuple[int, int]:
        key = (expert_id, labels)
        hit = self._sub_cache.get(key)
        if hit is None:
            counts = self._counts.get(expert_id, self._empty)
            idx = np.asarray(labels, dtype=np.int64)
            sub = counts[np.ix_(idx, idx)]
            hit = (int(np.trace(sub)), int(sub.sum()))
            self._sub_cache[key] = hit
        return hit

    def view(self, expert_id: str, exclude_sample: str) -> "LooProfileView":
        return LooProfileView(self, expert_id, exclude_sample)


class LooProfileView:
    """Profile of one expert with one sample's evidence removed."""

    __slots__ = ("expert_id", "cost", "overall_accuracy", "_know", "_removed")

    def __init__(self, know: ExpertKnowledge, expert_id: str, exclude_sample: str) -> None:
        self.expert_id = expert_id
        self.cost = 1.0
        self._know = know
        self._removed = know._known.get((expert_id, exclude_sample))
        trace = know._trace.get(expert_id, 0)
        total = know._total.get(expert_id, 0)
        if self._removed is not None:
            truth, pred = self._removed
            total -= 1
            trace -= truth == pred
        self.overall_accuracy = trace / total if total else 0.0

    def segregativity_over(self, labels: Sequence[int]) -> float | None:
        key = tuple(sorted(labels))
        diag, total = self._know._sub_sums(self.expert_id, key)
        if self._removed is not None:
            truth, pred = self._removed
            if truth in key and pred in key:
                total -= 1
                diag -= truth == pred
        return diag / total if total else None


def _n_shot_records(
    store: AnnotationStore,
    table: ProbabilityTable,
    shots: int,
    seed: int,
    split_index: int,
) -> tuple:
    """Uniform per-(expert, true label) subsample without replacement."""
    rng = _rng(seed, _STREAM_SHOTS, split_index)
    out: list[ExpertRecord] = []
    short = 0
    for expert_id in store.expert_ids:
        per_label: dict[int, list[tuple[str, int]]] = defaultdict(list)
        annotations = store.by_expert[expert_id]
        for sample_id in sorted(annotations):
            per_label[table.truth_of(sample_id)].append((sample_id, annotations[sample_id]))
        for label in sorted(per_label):
            group = per_label[label]
            if len(group) <= shots:
                picked = group
                if len(group) < shots:
                    short += 1
            else:
                rows = rng.choice(len(group), size=shots, replace=False)
                picked = [group[i] for i in rows]
            out.extend(ExpertRecord(expert_id, sid, pred) for sid, pred in picked)
    if short:
        warnings.warn(
            f"{short} (expert, label) groups had fewer than {shots} records; "
            "kept all available",
            stacklevel=2,
        )
    return tuple(out)


def workload_metrics(outcomes: Sequence[Outcome]) -> tuple[int, int, float | None]:
    """Total queries, max queries to one expert, average per queried expert
    (None when nothing was deferred)."""
    queried = Counter(
        o.queried_expert for o in outcomes if o.queried_expert is not None
    )
    n_queries = sum(queried.values())
    if not queried:
        return 0, 0, None
    return n_queries, max(queried.values()), n_queries / len(queried)


def _result(
    strategy: Strategy,
    score_kind: ScoreKind,
    alpha: float,
    split_index: int,
    n_test: int,
    n_correct: int,
    outcomes: Sequence[Outcome],
) -> RunResult:
    n_queries, max_qpe, avg_qpe = workload_metrics(outcomes)
    n_experts = int(round(n_queries / avg_qpe)) if avg_qpe else 0
    return RunResult(
        strategy=strategy,
        score_kind=score_kind,
        alpha=alpha,
        split_index=split_index,
        accuracy=n_correct / n_test,
        n_queries=n_queries,
        max_qpe=max_qpe,
        avg_qpe=avg_qpe,
        n_experts_queried=n_experts,
    )


def run_split(config: RunConfig, split: SplitSpec) -> list[RunResult]:
    """Evaluate every requested (strategy, alpha) cell on one split.

    The threshold is calibrated once per alpha; set-gated strategies share
    the deferral mask at each alpha and differ only in expert selection.
    Raises ``NoEligibleExpertError`` when a deferral finds no annotating
    expert, aborting the run so experiments stay internally comparable.
    """
    table, store = config.table, config.store
    kind = config.score_kind
    cal_ids, test_ids = stratified_split(table, split)
    cal = table.subset(cal_ids)

    params: RapsParams | None = None
    if kind is ScoreKind.RAPS:
        rng_tune = _rng(config.master_seed, _STREAM_TUNE, split.split_index)
        perm = rng_tune.permutation(len(cal_ids))
        n_tune = max(4, round(RAPS_TUNING_FRACTION * len(cal_ids)))
        tune_rows, fit_rows = perm[:n_tune], perm[n_tune:]
        params = tune_raps(
            cal.probs[tune_rows], cal.truths[tune_rows],
            config.raps_tuning_alpha, config.raps_grid,
        )
        cal_probs, cal_truths = cal.probs[fit_rows], cal.truths[fit_rows]
    else:
        cal_probs, cal_truths = cal.probs, cal.truths
    cal_scores = true_label_scores(cal_probs, cal_truths, kind, params)

    test = table.subset(test_ids)
    builder = SetBuilder(test.probs, kind, params)
    model_labels = builder.model_labels()
    truths = test.truths
    n_test = len(test_ids)

    if config.shots is None:
        know = ExpertKnowledge(store, table)
        full_know = know
    else:
        selection = _n_shot_records(store, table, config.shots, config.master_seed, split.split_index)
        know = ExpertKnowledge(store, table, selection)
        full_know = ExpertKnowledge(store, table)

    candidates = [know.candidates(sid) for sid in test_ids]
    annotations = [store.by_sample.get(sid, {}) for sid in test_ids]

    def run_always_defer(strategy: Strategy) -> tuple[int, list[Outcome]]:
        rng = _rng(config.master_seed, _STREAM_DECIDE, split.split_index, _STRATEGY_ID[strategy], 0)
        outcomes: list[Outcome] = []
        n_correct = 0
        for j in range(n_test):
            if not candidates[j]:
                raise NoEligibleExpertError(f"sample {test_ids[j]!r} has no annotating expert")
            views = [full_know.view(e, test_ids[j]) for e in candidates[j]]
            dec = decide(test.probs[j], None, views, strategy, config.tie_rule, rng)
            out = resolve(dec, annotations[j], int(truths[j]))
            n_correct += out.correct
            outcomes.append(out)
        return n_correct, outcomes

    results: list[RunResult] = []
    fixed_rows: dict[Strategy, tuple[int, list[Outcome]]] = {}
    if Strategy.MODEL_ONLY in config.strategies:
        fixed_rows[Strategy.MODEL_ONLY] = (int(np.sum(model_labels == truths)), [])
    for strategy in ALWAYS_DEFER_STRATEGIES:
        if strategy in config.strategies:
            fixed_rows[strategy] = run_always_defer(strategy)

    gated = [s for s in SET_GATED_STRATEGIES if s in config.strategies]
    for ai, alpha in enumerate(config.alphas):
        thr = calibrate(cal_scores, alpha, kind, n_classes=table.n_classes)
        for strategy, (n_correct, outcomes) in fixed_rows.items():
            results.append(
                _result(strategy, kind, alpha, split.split_index, n_test, n_correct, outcomes)
            )
        if not gated:
            continue
        sizes = builder.sizes(thr.tau)
        model_rows = sizes == 1
        base_correct = int(np.sum((model_labels == truths) & model_rows))
        defer_rows = np.nonzero(~model_rows)[0]
        sets = {j: PredictionSet(builder.labels_for(j, thr.tau), alpha) for j in defer_rows}
        for strategy in gated:
            rng = _rng(
                config.master_seed, _STREAM_DECIDE, split.split_index,
                _STRATEGY_ID[strategy], ai + 1,
            )
            n_correct = base_correct
            outcomes: list[Outcome] = []
            for j in defer_rows:
                if not candidates[j]:
                    raise NoEligibleExpertError(
                        f"sample {test_ids[j]!r} has no annotating expert"
                    )
                views = [know.view(e, test_ids[j]) for e in candidates[j]]
                dec = decide(
                    test.probs[j], thr, views, strategy, config.tie_rule, rng,
                    params=params, label_set=sets[j],
                )
                out = resolve(dec, annotations[j], int(truths[j]))
                n_correct += out.correct
                outcomes.append(out)
            results.append(
                _result(strategy, kind, alpha, split.split_index, n_test, n_correct, outcomes)
            )
    return results


def _run_split_task(args: tuple[RunConfig, SplitSpec]) -> list[RunResult]:
    return run_split(*args)


def run_sweep(config: RunConfig) -> list[RunResult]:
    """Run every split, optionally across a process pool.

    Results are identical for any worker count: splits are independent
    and every random stream is derived, never shared.
    """
    splits = [
        SplitSpec(seed=config.master_seed, cal_size=config.cal_size, split_index=i)
        for i in range(config.n_splits)
    ]
    jobs = max(1, config.jobs)
    if jobs == 1 or len(splits) == 1:
        chunks = [run_split(config, s) for s in splits]
    else:
        tasks = [(config, s) for s in splits]
        with ProcessPoolExecutor(max_workers=min(jobs, len(splits))) as pool:
            chunks = list(pool.map(_run_split_task, tasks))
    return [r for chunk in chunks for r in chunk]


def select_alpha_opt(results: Sequence[RunResult]) -> float:
    """Alpha with the highest mean accuracy across splits; ties go to the
    smallest alpha."""
    if not results:
        raise ValueError("no results to select from")
    by_alpha: dict[float, list[float]] = defaultdict(list)
    for r in results:
        by_alpha[r.alpha].append(r.accuracy)
    best_alpha = math.nan
    best_mean = -math.inf
    for alpha in sorted(by_alpha):
        mean = sum(by_alpha[alpha]) / len(by_alpha[alpha])
        if mean > best_mean:
            best_mean = mean
            best_alpha = alpha
    return best_alpha


def _stars(p: float) -> int:
    return sum(p < t for t in STAR_THRESHOLDS)


@dataclass(frozen=True)
class SignificanceVerdict:
    """One-sided comparison against the stronger baseline.

    ``p_value`` and ``test_used`` refer to the stronger of the two
    baselines by mean accuracy; complementarity additionally requires
    significance (p < 0.05) against the weaker one.
    """

    test_used: str
    p_value: float
    stars: int
    complementarity: bool
    baseline: str
    p_value_secondary: float


def _one_sided(method: np.ndarray, baseline: np.ndarray) -> tuple[str, float]:
    d = method - baseline
    if np.all(d == 0):
        raise ValueError("degenerate comparison: all differences are zero")
    try:
        normal = shapiro_wilk(d).p_value >= 0.05
    except ValueError:
        normal = False  # constant differences: route to the rank test
    if normal:
        return "paired_t", paired_t_one_tailed(method, baseline).p_value
    return "wilcoxon", wilcoxon_one_tailed(method, baseline).p_value


def complementarity_test(
    method_accs: Sequence[float],
    best_expert_accs: Sequence[float],
    model_accs: Sequence[float],
) -> SignificanceVerdict:
    """Test whether a strategy beats both reference baselines.

    The reported test targets the stronger baseline by mean; normality of
    the paired differences (Shapiro-Wilk at 0.05) routes to the paired t
    or the Wilcoxon signed-rank test, both one-sided toward the method.
    """
    method = np.asarray(method_accs, dtype=np.float64)
    best = np.asarray(best_expert_accs, dtype=np.float64)
    model = np.asarray(model_accs, dtype=np.float64)
    if not method.size == best.size == model.size:
        raise ValueError("per-split accuracy vectors must have equal length")
    if method.size < 3:
        raise ValueError("need at least 3 splits for significance testing")
    if best.mean() >= model.mean():
        strong, weak, strong_name = best, model, Strategy.BEST_EXPERT.value
    else:
        strong, weak, strong_name = model, best, Strategy.MODEL_ONLY.value
    test_used, p_main = _one_sided(method, strong)
    if np.all(method - weak == 0):
        p_weak = 1.0
    else:
        _, p_weak = _one_sided(method, weak)
    return SignificanceVerdict(
        test_used=test_used,
        p_value=p_main,
        stars=_stars(p_main),
        complementarity=p_main < 0.05 and p_weak < 0.05,
        baseline=strong_name,
        p_value_secondary=p_weak,
    )


_ALPHA_FREE = (Strategy.MODEL_ONLY, Strategy.BEST_EXPERT, Strategy.RANDOM_EXPERT)


def _mean_sd(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), sd


def summarize(results: Sequence[RunResult]) -> dict:
    """Per-strategy summary at the accuracy-optimal miscoverage.

    For each strategy the alpha with the best mean accuracy is selected
    globally; per-split accuracies at that alpha feed the significance
    protocol against the stronger of the best-expert and model-only
    baselines (when both are present and at least 3 splits ran).
    """
    if not results:
        raise ValueError("nothing to summarize")
    kind = results[0].score_kind
    by_strategy: dict[Strategy, list[RunResult]] = defaultdict(list)
    for r in results:
        by_strategy[r.strategy].append(r)

    per_split_accs: dict[Strategy, list[float]] = {}
    blocks: dict[str, dict] = {}
    for strategy in Strategy:
        rows = by_strategy.get(strategy)
        if not rows:
            continue
        if strategy in _ALPHA_FREE:
            alpha_opt = None
            first_alpha = min(r.alpha for r in rows)
            chosen = [r for r in rows if r.alpha == first_alpha]
        else:
            alpha_opt = select_alpha_opt(rows)
            chosen = [r for r in rows if r.alpha == alpha_opt]
        chosen.sort(key=lambda r: r.split_index)
        accs = [r.accuracy for r in chosen]
        per_split_accs[strategy] = accs
        acc_mean, acc_sd = _mean_sd(accs)
        nq_mean, nq_sd = _mean_sd([r.n_queries for r in chosen])
        mq_mean, mq_sd = _mean_sd([r.max_qpe for r in chosen])
        avgs = [r.avg_qpe for r in chosen if r.avg_qpe is not None]
        avg_mean, avg_sd = _mean_sd(avgs) if avgs else (None, None)
        blocks[strategy.value] = {
            "alpha_opt": alpha_opt,
            "n_splits": len(chosen),
            "accuracy_mean": acc_mean,
            "accuracy_sd": acc_sd,
            "n_queries_mean": nq_mean,
            "n_queries_sd": nq_sd,
            "max_qpe_mean": mq_mean,
            "max_qpe_sd": mq_sd,
            "avg_qpe_mean": avg_mean,
            "avg_qpe_sd": avg_sd,
            "significance": None,
        }

    have_baselines = (
        Strategy.BEST_EXPERT in per_split_accs and Strategy.MODEL_ONLY in per_split_accs
    )
    for strategy in SET_GATED_STRATEGIES:
        if strategy not in per_split_accs or not have_baselines:
            continue
        accs = per_split_accs[strategy]
        if len(accs) < 3:
            continue
        try:
            verdict = complementarity_test(
                accs,
                per_split_accs[Strategy.BEST_EXPERT],
                per_split_accs[Strategy.MODEL_ONLY],
            )
        except ValueError:
            continue
        blocks[strategy.value]["significance"] = {
            "test_used": verdict.test_used,
            "p_value": verdict.p_value,
            "stars": verdict.stars,
            "complementarity": verdict.complementarity,
            "baseline": verdict.baseline,
            "p_value_secondary": verdict.p_value_secondary,
        }

    return {"score": kind.value, "strategies": blocks}


class AblationCoverageError(RuntimeError):
    """An expert-pool cut left some sample with no annotator."""


def rank_experts_by_accuracy(store: AnnotationStore, table: ProbabilityTable) -> list[tuple[float, str]]:
    """(accuracy, expert_id) pairs, least accurate first, on the full store."""
    ranked = []
    for expert_id in store.expert_ids:
        annotations = store.by_expert[expert_id]
        correct = sum(pred == table.truth_of(sid) for sid, pred in annotations.items())
        ranked.append((correct / len(annotations), expert_id))
    ranked.sort()
    return ranked


def kept_bottom_fraction(
    store: AnnotationStore, table: ProbabilityTable, f_kept: float
) -> tuple[str, ...]:
    """Ids of the bottom-accuracy fraction of experts (count rounded up)."""
    if not 0.0 < f_kept <= 1.0:
        raise ValueError("f_kept must be in (0, 1]")
    ranked = rank_experts_by_accuracy(store, table)
    keep = _ceil_guarded(f_kept * len(ranked))
    return tuple(expert_id for _, expert_id in ranked[:keep])


def ablate_expert_fraction(
    config: RunConfig, fractions: Sequence[float]
) -> dict[float, list[RunResult]]:
    """Re-run the sweep keeping only the weakest fraction of experts.

    Raises ``AblationCoverageError`` when a fraction strands some sample
    with no annotator (that grid point is invalid, not skippable).
    """
    out: dict[float, list[RunResult]] = {}
    for f_kept in fractions:
        kept = kept_bottom_fraction(config.store, config.table, f_kept)
        sub = config.store.restrict_to_experts(kept)
        stranded = [sid for sid in config.table.sample_ids if not sub.annotators_of(sid)]
        if stranded:
            raise AblationCoverageError(
                f"f_kept={f_kept}: {len(stranded)} samples lose all annotators "
                f"(first: {stranded[0]!r})"
            )
        out[f_kept] = run_sweep(replace(config, store=sub))
    return out


def ablate_shots(config: RunConfig, shots_grid: Sequence[int]) -> dict[int, list[RunResult]]:
    """Re-run the sweep under n-shot expert knowledge for each grid value.

    Selection knowledge shrinks; replay resolution keeps the full store,
    so strategies that ignore expert knowledge are untouched.
    """
    return {n: run_sweep(replace(config, shots=n)) for n in shots_grid}
