import math
import warnings

import numpy as np
import pytest

from conf_deferral.conformal import ScoreKind
from conf_deferral.dataio import (
    AnnotationStore,
    ClassMapping,
    DataFormatError,
    ProbabilityTable,
    RunResult,
    aggregate_superclasses,
    load_annotations,
    load_mapping,
    load_probabilities,
    load_results,
    write_annotations,
    write_probabilities,
    write_results,
)
from conf_deferral.experts import ExpertRecord
from conf_deferral.policy import Strategy


def _write(path, text):
    path.write_text(text)
    return path


def test_load_probabilities_basic(tmp_path):
    path = _write(tmp_path / "p.csv", "sample_id,true_label,p_0,p_1\na,0,0.7,0.3\nb,1,0.2,0.8\n")
    table = load_probabilities(path)
    assert table.n_samples == 2 and table.n_classes == 2
    assert table.truth_of("b") == 1
    assert table.probs_of("a")[0] == 0.7


def test_load_probabilities_duplicate_id_names_line(tmp_path):
    path = _write(
        tmp_path / "p.csv",
        "sample_id,true_label,p_0,p_1\na,0,0.7,0.3\na,1,0.2,0.8\n",
    )
    with pytest.raises(DataFormatError, match=r"line 3.*'a'"):
        load_probabilities(path)


def test_load_probabilities_normalization_rules(tmp_path):
    # beyond 1e-3: hard error
    path = _write(tmp_path / "bad.csv", "sample_id,true_label,p_0,p_1\na,0,0.5,0.4\n")
    with pytest.raises(DataFormatError, match="line 2"):
        load_probabilities(path)
    # within (1e-6, 1e-3]: renormalized with a warning
    path = _write(tmp_path / "drift.csv", "sample_id,true_label,p_0,p_1\na,0,0.5,0.5001\n")
    with pytest.warns(UserWarning, match="renormalized"):
        table = load_probabilities(path)
    assert table.probs_of("a").sum() == pytest.approx(1.0, abs=1e-12)


def test_load_probabilities_malformations(tmp_path):
    with pytest.raises(DataFormatError, match="line 1"):
        load_probabilities(_write(tmp_path / "h.csv", "id,label,p_0\nx,0,1\n"))
    with pytest.raises(DataFormatError, match="line 2"):
        load_probabilities(
            _write(tmp_path / "f.csv", "sample_id,true_label,p_0,p_1\na,0,0.5\n")
        )
    with pytest.raises(DataFormatError, match="line 2"):
        load_probabilities(
            _write(tmp_path / "l.csv", "sample_id,true_label,p_0,p_1\na,7,0.5,0.5\n")
        )
    with pytest.raises(DataFormatError, match="empty"):
        load_probabilities(_write(tmp_path / "e.csv", ""))


def _random_table(rng, n=20, n_classes=4):
    probs = rng.dirichlet(np.ones(n_classes), size=n)
    return ProbabilityTable(
        sample_ids=tuple(f"s{i}" for i in range(n)),
        truths=rng.integers(0, n_classes, size=n),
        probs=probs,
    )


def test_probability_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    table = _random_table(rng)
    path = write_probabilities(table, tmp_path / "probs.csv")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        loaded = load_probabilities(path)
    assert loaded.sample_ids == table.sample_ids
    assert np.array_equal(loaded.truths, table.truths)
    assert np.array_equal(loaded.probs, table.probs)


def test_shuffled_rows_load_to_identical_content(tmp_path):
    rng = np.random.default_rng(1)
    table = _random_table(rng)
    lines = write_probabilities(table, tmp_path / "a.csv").read_text().splitlines()
    header, rows = lines[0], lines[1:]
    rng.shuffle(rows)
    shuffled = _write(tmp_path / "b.csv", "\n".join([header] + rows) + "\n")
    loaded = load_probabilities(shuffled)
    assert set(loaded.sample_ids) == set(table.sample_ids)
    for sid in table.sample_ids:
        assert loaded.truth_of(sid) == table.truth_of(sid)
        assert np.array_equal(loaded.probs_of(sid), table.probs_of(sid))


def test_load_annotations_and_referential_checks(tmp_path):
    rng = np.random.default_rng(2)
    table = _random_table(rng, n=4)
    path = _write(
        tmp_path / "a.csv",
        "expert_id,sample_id,predicted_label\ne1,s0,1\ne1,s1,2\ne2,s0,0\n",
    )
    store = load_annotations(path, table)
    assert store.annotators_of("s0") == ("e1", "e2")
    assert store.annotation("e1", "s1") == 2

    bad = _write(tmp_path / "unknown.csv", "expert_id,sample_id,predicted_label\ne1,zz,0\n")
    with pytest.raises(DataFormatError, match="line 2.*'zz'"):
        load_annotations(bad, table)
    dup = _write(
        tmp_path / "dup.csv",
        "expert_id,sample_id,predicted_label\ne1,s0,1\ne1,s0,1\n",
    )
    with pytest.raises(DataFormatError, match="line 3"):
        load_annotations(dup, table)
    rng_file = _write(tmp_path / "range.csv", "expert_id,sample_id,predicted_label\ne1,s0,9\n")
    with pytest.raises(DataFormatError, match="line 2"):
        load_annotations(rng_file, table)


def test_load_annotations_empty_is_valid(tmp_path):
    rng = np.random.default_rng(3)
    table = _random_table(rng, n=2)
    path = _write(tmp_path / "a.csv", "expert_id,sample_id,predicted_label\n")
    store = load_annotations(path, table)
    assert store.records == ()
    assert store.annotators_of("s0") == ()


def test_annotation_store_shuffled_rows_identical(tmp_path):
    rng = np.random.default_rng(4)
    table = _random_table(rng, n=6)
    records = tuple(
        ExpertRecord(f"e{k}", f"s{i}", int(rng.integers(4)))
        for k in range(3)
        for i in range(6)
    )
    store = AnnotationStore(records=records)
    path = write_annotations(store, tmp_path / "a.csv")
    lines = path.read_text().splitlines()
    rng.shuffle(lines[1:])
    shuffled = _write(tmp_path / "b.csv", "\n".join(lines) + "\n")
    loaded = load_annotations(shuffled, table)
    assert loaded.by_sample == store.by_sample
    assert loaded.by_expert == store.by_expert


def test_mapping_and_aggregation(tmp_path):
    rng = np.random.default_rng(5)
    table = ProbabilityTable(
        sample_ids=("a",),
        truths=np.array([2]),
        probs=np.array([[0.1, 0.2, 0.3, 0.4]]),
    )
    path = _write(tmp_path / "m.csv", "fine_label,coarse_label\n0,0\n1,0\n2,1\n3,1\n")
    mapping = load_mapping(path, 4)
    coarse = aggregate_superclasses(table, mapping)
    assert np.allclose(coarse.probs[0], [0.3, 0.7])
    assert coarse.truths[0] == 1

    identity = ClassMapping(fine_to_coarse=np.arange(4))
    same = aggregate_superclasses(table, identity)
    assert np.array_equal(same.probs, table.probs)
    assert np.array_equal(same.truths, table.truths)


def test_mapping_malformations(tmp_path):
    missing = _write(tmp_path / "m1.csv", "fine_label,coarse_label\n0,0\n1,0\n2,1\n")
    with pytest.raises(DataFormatError, match="misses"):
        load_mapping(missing, 4)
    gap = _write(tmp_path / "m2.csv", "fine_label,coarse_label\n0,0\n1,2\n")
    with pytest.raises(DataFormatError, match="contiguous"):
        load_mapping(gap, 2)
    twice = _write(tmp_path / "m3.csv", "fine_label,coarse_label\n0,0\n0,1\n1,1\n")
    with pytest.raises(DataFormatError, match="line 3"):
        load_mapping(twice, 2)


def _sample_results():
    return [
        RunResult(Strategy.SEGREGATIVITY, ScoreKind.APS, 0.1, 1, 0.95, 10, 6, 10 / 3, 3),
        RunResult(Strategy.SEGREGATIVITY, ScoreKind.APS, 0.1, 0, 0.96, 8, 5, 8 / 2, 2),
        RunResult(Strategy.MODEL_ONLY, ScoreKind.APS, 0.1, 0, 0.9, 0, 0, None, 0),
    ]


def test_write_results_layout_and_empty_avg(tmp_path):
    paths = write_results(_sample_results(), {"score": "aps"}, tmp_path)
    lines = paths["results"].read_text().splitlines()
    assert lines[0] == "split,score,strategy,alpha,accuracy,n_queries,max_qpe,avg_qpe"
    # stable order: strategy declaration order, then alpha, then split
    assert [l.split(",")[2] for l in lines[1:]] == [
        "segregativity", "segregativity", "model_only",
    ]
    assert [l.split(",")[0] for l in lines[1:3]] == ["0", "1"]
    model_row = lines[3].split(",")
    assert model_row[7] == ""  # undefined avg_qpe stays empty, not 0


def test_write_results_reruns_byte_identical(tmp_path):
    first = write_results(_sample_results(), {"score": "aps"}, tmp_path / "a")
    second = write_results(_sample_results(), {"score": "aps"}, tmp_path / "b")
    assert first["results"].read_bytes() == second["results"].read_bytes()
    assert first["summary"].read_bytes() == second["summary"].read_bytes()


def test_results_round_trip(tmp_path):
    results = _sample_results()
    paths = write_results(results, None, tmp_path)
    loaded = load_results(paths["results"])
    key = lambda r: (r.strategy.value, r.alpha if not math.isnan(r.alpha) else -1, r.split_index)
    for got, want in zip(sorted(loaded, key=key), sorted(results, key=key)):
        assert got.strategy == want.strategy
        assert got.score_kind == want.score_kind
        assert got.alpha == want.alpha
        assert got.accuracy == want.accuracy
        assert got.n_queries == want.n_queries
        assert got.max_qpe == want.max_qpe
        assert got.avg_qpe == want.avg_qpe
        assert got.n_experts_queried == want.n_experts_queried
