from dataclasses import replace

import numpy as np
import pytest

from conf_deferral.conformal import ScoreKind
from conf_deferral.dataio import AnnotationStore, ProbabilityTable
from conf_deferral.evaluation import (
    AblationCoverageError,
    ExpertKnowledge,
    RunConfig,
    SplitSpec,
    _n_shot_records,
    ablate_expert_fraction,
    ablate_shots,
    alpha_grid,
    complementarity_test,
    kept_bottom_fraction,
    run_split,
    run_sweep,
    select_alpha_opt,
    stratified_split,
    summarize,
    workload_metrics,
)
from conf_deferral.experts import ExpertProfile, ExpertRecord, build_confusion, segregativity
from conf_deferral.dataio import RunResult
from conf_deferral.policy import Outcome, Strategy
from conf_deferral.synth import Generalist, SynthConfig, canonical_scenario, gen_dataset


def test_alpha_grid_93():
    grid = alpha_grid(0.93)
    # oracle: enumerate both segments with integer arithmetic
    expected = [i / 1000 for i in range(1, 71)] + [i / 1000 for i in range(80, 991, 10)]
    assert list(grid) == expected
    assert len(grid) == 162
    assert grid[0] == 0.001 and grid[69] == 0.07 and grid[70] == 0.08 and grid[-1] == 0.99


def test_alpha_grid_99():
    grid = alpha_grid(0.99)
    expected = [i / 1000 for i in range(1, 11)] + [i / 1000 for i in range(20, 991, 10)]
    assert list(grid) == expected
    assert len(grid) == 108


def test_alpha_grid_strictly_increasing():
    for acc in (0.5, 0.731, 0.9, 0.998):
        grid = alpha_grid(acc)
        assert all(b > a for a, b in zip(grid, grid[1:]))


def test_alpha_grid_bounds():
    for bad in (0.001, 0.0005, 0.999, 1.2):
        with pytest.raises(ValueError):
            alpha_grid(bad)


def _balanced_table(rng, n_classes=10, per_class=120):
    n = n_classes * per_class
    truths = np.repeat(np.arange(n_classes), per_class)
    probs = rng.dirichlet(np.ones(n_classes), size=n)
    return ProbabilityTable(
        sample_ids=tuple(f"s{i:05d}" for i in range(n)), truths=truths, probs=probs
    )


def test_stratified_split_balanced_allocation():
    rng = np.random.default_rng(0)
    table = _balanced_table(rng)
    cal_ids, test_ids = stratified_split(table, SplitSpec(seed=3, cal_size=1000))
    assert len(cal_ids) == 1000 and len(test_ids) == 200
    per_class = np.bincount([table.truth_of(s) for s in cal_ids], minlength=10)
    assert np.all(per_class == 100)
    assert set(cal_ids).isdisjoint(test_ids)
    assert set(cal_ids) | set(test_ids) == set(table.sample_ids)


def test_stratified_split_largest_remainder_oracle():
    rng = np.random.default_rng(1)
    # class sizes 5, 6, 9 with cal_size 7: quotas 1.75, 2.1, 3.15
    # floors 1, 2, 3; the leftover unit goes to class 0 (largest remainder)
    truths = np.array([0] * 5 + [1] * 6 + [2] * 9)
    probs = rng.dirichlet(np.ones(3), size=20)
    table = ProbabilityTable(
        sample_ids=tuple(f"s{i}" for i in range(20)), truths=truths, probs=probs
    )
    cal_ids, _ = stratified_split(table, SplitSpec(seed=0, cal_size=7))
    per_class = np.bincount([table.truth_of(s) for s in cal_ids], minlength=3)
    assert per_class.tolist() == [2, 2, 3]


def test_stratified_split_deterministic_and_seed_sensitive():
    rng = np.random.default_rng(2)
    table = _balanced_table(rng, n_classes=4, per_class=30)
    spec = SplitSpec(seed=9, cal_size=40, split_index=5)
    assert stratified_split(table, spec) == stratified_split(table, spec)
    other = stratified_split(table, SplitSpec(seed=9, cal_size=40, split_index=6))
    assert other != stratified_split(table, spec)


def test_stratified_split_errors():
    rng = np.random.default_rng(3)
    table = _balanced_table(rng, n_classes=3, per_class=5)
    with pytest.raises(ValueError):
        stratified_split(table, SplitSpec(seed=0, cal_size=15))
    with pytest.raises(ValueError):
        stratified_split(table, SplitSpec(seed=0, cal_size=2))


def _toy_world(rng, n=60, n_classes=4, n_experts=3, coverage=0.8):
    table = ProbabilityTable(
        sample_ids=tuple(f"s{i}" for i in range(n)),
        truths=rng.integers(0, n_classes, size=n),
        probs=rng.dirichlet(np.ones(n_classes), size=n),
    )
    records = []
    for k in range(n_experts):
        for i in range(n):
            if rng.random() < coverage:
                records.append(
                    ExpertRecord(f"e{k}", f"s{i}", int(rng.integers(n_classes)))
                )
    return table, AnnotationStore(records=tuple(records))


def test_loo_views_match_rebuild_oracle():
    rng = np.random.default_rng(4)
    table, store = _toy_world(rng)
    know = ExpertKnowledge(store, table)
    truths = {sid: table.truth_of(sid) for sid in table.sample_ids}
    for expert_id in store.expert_ids:
        expert_records = [r for r in store.records if r.expert_id == expert_id]
        for sample_id in list(store.by_expert[expert_id])[:10]:
            view = know.view(expert_id, sample_id)
            oracle_cm = build_confusion(expert_records, truths, 4, exclude=sample_id)
            oracle = ExpertProfile(expert_id, oracle_cm)
            assert view.overall_accuracy == oracle.overall_accuracy
            for _ in range(5):
                size = int(rng.integers(1, 5))
                subset = tuple(int(v) for v in rng.choice(4, size=size, replace=False))
                assert view.segregativity_over(subset) == segregativity(oracle_cm, subset)


def test_loo_view_for_non_annotating_sample_is_global():
    rng = np.random.default_rng(5)
    table, store = _toy_world(rng, coverage=0.5)
    know = ExpertKnowledge(store, table)
    expert_id = store.expert_ids[0]
    unannotated = next(
        sid for sid in table.sample_ids if expert_id not in store.by_sample.get(sid, {})
    )
    truths = {sid: table.truth_of(sid) for sid in table.sample_ids}
    expert_records = [r for r in store.records if r.expert_id == expert_id]
    oracle = ExpertProfile(expert_id, build_confusion(expert_records, truths, 4))
    assert know.view(expert_id, unannotated).overall_accuracy == oracle.overall_accuracy


def test_workload_metrics_examples():
    def outcome(expert):
        return Outcome(final_label=0, correct=True, queried_expert=expert)

    outcomes = [outcome("e1")] * 3 + [outcome("e2")] + [outcome(None)] * 4
    assert workload_metrics(outcomes) == (4, 3, 2.0)
    assert workload_metrics([outcome(None)] * 3) == (0, 0, None)
    assert workload_metrics([outcome("e9")]) == (1, 1, 1.0)


def _rr(strategy, alpha, split, accuracy):
    return RunResult(strategy, ScoreKind.APS, alpha, split, accuracy, 0, 0, None, 0)


def test_select_alpha_opt():
    rows = [_rr(Strategy.SEGREGATIVITY, 0.01, 0, 0.99), _rr(Strategy.SEGREGATIVITY, 0.5, 0, 0.95)]
    assert select_alpha_opt(rows) == 0.01
    ties = [_rr(Strategy.SEGREGATIVITY, a, 0, 0.9) for a in (0.3, 0.1, 0.2)]
    assert select_alpha_opt(ties) == 0.1
    assert select_alpha_opt([_rr(Strategy.SEGREGATIVITY, 0.2, 0, 0.5)]) == 0.2
    with pytest.raises(ValueError):
        select_alpha_opt([])


def test_complementarity_routing_and_stars():
    base = np.full(5, 0.5)
    method = base + np.array([1, 2, 3, 4, 5], dtype=float)
    weak = base - 1.0
    verdict = complementarity_test(method, base, weak)
    assert verdict.test_used == "paired_t"
    assert verdict.baseline == "best_expert"
    assert verdict.p_value == pytest.approx(0.00661779978, abs=5e-4)
    assert verdict.stars == 2
    assert verdict.complementarity


def test_complementarity_method_equal_to_weaker_baseline():
    # p lands in the >= 0.5 region against the stronger baseline, 0 stars
    rng = np.random.default_rng(6)
    weak = rng.normal(0.8, 0.01, size=10)
    strong = weak + 0.05
    verdict = complementarity_test(weak.copy(), strong, weak.copy())
    assert verdict.p_value >= 0.5
    assert verdict.stars == 0
    assert not verdict.complementarity


def test_complementarity_degenerate_against_stronger_baseline():
    same = np.full(6, 0.9)
    with pytest.raises(ValueError):
        complementarity_test(same, same, same - 0.1)


def test_complementarity_beating_only_one_baseline():
    rng = np.random.default_rng(7)
    model = rng.normal(0.95, 0.005, size=12)  # stronger baseline
    best = rng.normal(0.80, 0.005, size=12)
    method = best + 0.02  # beats best_expert, loses to model
    verdict = complementarity_test(method, best, model)
    assert verdict.baseline == "model_only"
    assert not verdict.complementarity
    assert verdict.p_value > 0.05 and verdict.p_value_secondary < 0.05


def test_complementarity_requires_three_splits():
    with pytest.raises(ValueError):
        complementarity_test([0.9, 0.91], [0.8, 0.81], [0.7, 0.71])


@pytest.fixture(scope="module")
def small_world():
    cfg = canonical_scenario(seed=13, n_samples=420)
    table, store = gen_dataset(cfg)
    config = RunConfig(
        table=table,
        store=store,
        score_kind=ScoreKind.APS,
        alphas=(0.03, 0.08, 0.15, 0.3, 0.5),
        n_splits=2,
        cal_size=140,
        master_seed=4,
    )
    return config, run_sweep(config)


def test_run_split_model_only_rows(small_world):
    config, results = small_world
    for split_index in range(config.n_splits):
        spec = SplitSpec(seed=config.master_seed, cal_size=config.cal_size, split_index=split_index)
        _, test_ids = stratified_split(config.table, spec)
        sub = config.table.subset(test_ids)
        expected = sub.argmax_accuracy()
        rows = [
            r for r in results
            if r.strategy is Strategy.MODEL_ONLY and r.split_index == split_index
        ]
        assert rows and all(r.accuracy == expected and r.n_queries == 0 for r in rows)
        assert all(r.avg_qpe is None for r in rows)


def test_gated_strategies_share_n_queries(small_world):
    config, results = small_world
    for split_index in range(config.n_splits):
        for alpha in config.alphas:
            counts = {
                r.strategy: r.n_queries
                for r in results
                if r.split_index == split_index and r.alpha == alpha
                and r.strategy in (Strategy.SEGREGATIVITY, Strategy.NAIVE_MOST_ACCURATE,
                                   Strategy.NAIVE_RANDOM)
            }
            assert len(counts) == 3 and len(set(counts.values())) == 1


def test_always_defer_strategies_query_every_input(small_world):
    config, results = small_world
    for split_index in range(config.n_splits):
        spec = SplitSpec(seed=config.master_seed, cal_size=config.cal_size, split_index=split_index)
        _, test_ids = stratified_split(config.table, spec)
        for strategy in (Strategy.BEST_EXPERT, Strategy.RANDOM_EXPERT):
            rows = [
                r for r in results
                if r.strategy is strategy and r.split_index == split_index
            ]
            assert all(r.n_queries == len(test_ids) for r in rows)


def test_avg_qpe_reconstructs_exactly(small_world):
    _, results = small_world
    for r in results:
        if r.avg_qpe is None:
            assert r.n_queries == 0
        else:
            assert r.avg_qpe == r.n_queries / r.n_experts_queried


def test_run_split_deterministic(small_world):
    config, results = small_world
    spec = SplitSpec(seed=config.master_seed, cal_size=config.cal_size, split_index=1)
    again = run_split(config, spec)
    baseline = [r for r in results if r.split_index == 1]
    assert again == baseline


def test_run_sweep_worker_count_invariant(small_world):
    config, results = small_world
    parallel = run_sweep(replace(config, jobs=4))
    assert parallel == results


def test_deferral_monotone_in_alpha_for_cumulative_scores(small_world):
    config, _ = small_world
    for kind in (ScoreKind.APS, ScoreKind.RAPS):
        results = run_sweep(
            replace(config, score_kind=kind, strategies=(Strategy.SEGREGATIVITY,), n_splits=2)
        )
        for split_index in range(2):
            counts = [
                r.n_queries
                for r in sorted(
                    (x for x in results if x.split_index == split_index),
                    key=lambda x: x.alpha,
                )
            ]
            assert all(b <= a for a, b in zip(counts, counts[1:]))


def test_summarize_structure(small_world):
    config, results = small_world
    summary = summarize(results)
    assert summary["score"] == "aps"
    blocks = summary["strategies"]
    assert set(blocks) == {s.value for s in Strategy}
    assert blocks["model_only"]["alpha_opt"] is None
    assert blocks["segregativity"]["alpha_opt"] in config.alphas
    assert blocks["model_only"]["avg_qpe_mean"] is None
    # 2 splits only: significance needs >= 3
    assert blocks["segregativity"]["significance"] is None


def test_n_shot_subsampling_counts():
    rng = np.random.default_rng(8)
    table, store = _toy_world(rng, n=80, coverage=1.0)
    with pytest.warns(UserWarning):
        records = _n_shot_records(store, table, shots=30, seed=0, split_index=0)
    assert len(records) == len(store.records)  # saturated: all kept, flagged short

    records = _n_shot_records(store, table, shots=3, seed=0, split_index=0)
    per = {}
    for rec in records:
        key = (rec.expert_id, table.truth_of(rec.sample_id))
        per[key] = per.get(key, 0) + 1
    assert all(v <= 3 for v in per.values())
    # deterministic per (seed, split)
    again = _n_shot_records(store, table, shots=3, seed=0, split_index=0)
    assert records == again
    other = _n_shot_records(store, table, shots=3, seed=0, split_index=1)
    assert records != other


@pytest.mark.filterwarnings("ignore:.*fewer than.*:UserWarning")
def test_shots_saturation_equals_main_run(small_world):
    config, results = small_world
    # every expert annotates every sample: ~47 per label; shots beyond that saturate
    saturated = run_sweep(replace(config, shots=10_000))
    assert saturated == results


def test_naive_random_untouched_by_shots(small_world):
    config, _ = small_world
    runs = ablate_shots(replace(config, strategies=(Strategy.NAIVE_RANDOM,)), (2, 9))
    rows2 = [(r.alpha, r.split_index, r.accuracy, r.n_queries) for r in runs[2]]
    rows9 = [(r.alpha, r.split_index, r.accuracy, r.n_queries) for r in runs[9]]
    assert rows2 == rows9


def test_kept_bottom_fraction_rank_and_cut():
    rng = np.random.default_rng(9)
    table = _balanced_table(rng, n_classes=3, per_class=20)
    records = []
    accuracies = {"e0": 0.2, "e1": 0.9, "e2": 0.5, "e3": 0.7}
    for expert_id, acc in accuracies.items():
        for i, sid in enumerate(table.sample_ids):
            truth = table.truth_of(sid)
            pred = truth if rng.random() < acc else (truth + 1) % 3
            records.append(ExpertRecord(expert_id, sid, pred))
    store = AnnotationStore(records=tuple(records))
    kept = kept_bottom_fraction(store, table, 0.5)
    assert set(kept) == {"e0", "e2"}
    assert kept_bottom_fraction(store, table, 1.0) == ("e0", "e2", "e3", "e1")
    assert len(kept_bottom_fraction(store, table, 0.05)) == 1


def test_ablate_expert_fraction_noop_and_coverage_error(small_world):
    config, results = small_world
    runs = ablate_expert_fraction(replace(config, strategies=(Strategy.SEGREGATIVITY,)), (1.0,))
    expected = [r for r in results if r.strategy is Strategy.SEGREGATIVITY]
    assert runs[1.0] == expected

    # strand a sample: keep only one expert that annotates nothing for s0
    rng = np.random.default_rng(10)
    table, _ = _toy_world(rng, n=10, n_experts=1, coverage=1.0)
    records = tuple(
        ExpertRecord("good", sid, table.truth_of(sid)) for sid in table.sample_ids
    ) + tuple(
        ExpertRecord("bad", sid, (table.truth_of(sid) + 1) % 4)
        for sid in table.sample_ids[:5]
    )
    small = RunConfig(
        table=table, store=AnnotationStore(records=records), score_kind=ScoreKind.APS,
        alphas=(0.2,), n_splits=1, cal_size=4, master_seed=0,
    )
    with pytest.raises(AblationCoverageError):
        ablate_expert_fraction(small, (0.5,))


def test_alpha_opt_regime_ordering():
    # model-dominant regimes push the optimum toward larger miscoverage
    alphas = (0.02, 0.05, 0.1, 0.2, 0.35, 0.5, 0.7)
    opts = {}
    for regime, (model_acc, expert_acc) in {
        "model_dominant": (0.93, 0.72),
        "expert_dominant": (0.62, 0.95),
    }.items():
        per_seed = []
        for seed in range(6):
            cfg = SynthConfig(
                6, 420, model_acc, 0.5, (Generalist(expert_acc),), seed=seed
            )
            table, store = gen_dataset(cfg)
            config = RunConfig(
                table=table, store=store, score_kind=ScoreKind.APS, alphas=alphas,
                strategies=(Strategy.SEGREGATIVITY,), n_splits=1, cal_size=150,
                master_seed=seed,
            )
            per_seed.append(select_alpha_opt(run_sweep(config)))
        opts[regime] = float(np.mean(per_seed))
    assert opts["model_dominant"] > opts["expert_dominant"]
