"""File ingestion and emission.

All interchange is comma-separated text with mandatory headers:

* probability tables: ``sample_id,true_label,p_0,...,p_{C-1}``
* annotation stores:  ``expert_id,sample_id,predicted_label``
* class mappings:     ``fine_label,coarse_label``
* run results:        ``split,score,strategy,alpha,accuracy,n_queries,max_qpe,avg_qpe``

Floats are written with Python's shortest round-trip representation, so
writing and re-reading a table reproduces every value bit for bit.
Loaders report the offending line number for every malformation.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .conformal import ScoreKind, check_prob_vector
from .experts import ExpertRecord
from .policy import Strategy


class DataFormatError(ValueError):
    """Malformed input file; the message names the file and line."""


@dataclass(frozen=True)
class ProbabilityTable:
    """Per-sample ground truth and model probability vector."""

    sample_ids: tuple[str, ...]
    truths: np.ndarray
    probs: np.ndarray
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if len(self.sample_ids) != self.probs.shape[0] or len(self.sample_ids) != self.truths.size:
            raise ValueError("sample_ids, truths and probs must align")
        idx = {sid: i for i, sid in enumerate(self.sample_ids)}
        if len(idx) != len(self.sample_ids):
            raise ValueError("duplicate sample ids")
        if self.truths.size and (self.truths.min() < 0 or self.truths.max() >= self.n_classes):
            raise ValueError("truth labels out of range")
        object.__setattr__(self, "index", idx)

    @property
    def n_samples(self) -> int:
        return len(self.sample_ids)

    @property
    def n_classes(self) -> int:
        return self.probs.shape[1]

    def truth_of(self, sample_id: str) -> int:
        return int(self.truths[self.index[sample_id]])

    def probs_of(self, sample_id: str) -> np.ndarray:
        return self.probs[self.index[sample_id]]

    def subset(self, sample_ids: Sequence[str]) -> "ProbabilityTable":
        rows = [self.index[sid] for sid in sample_ids]
        return ProbabilityTable(
            sample_ids=tuple(sample_ids),
            truths=self.truths[rows].copy(),
            probs=self.probs[rows].copy(),
        )

    def argmax_accuracy(self) -> float:
        return float(np.mean(np.argmax(self.probs, axis=1) == self.truths))


@dataclass(frozen=True)
class AnnotationStore:
    """Replayable expert annotations, indexed by sample and by expert."""

    records: tuple[ExpertRecord, ...]
    by_sample: dict[str, dict[str, int]] = field(init=False, repr=False)
    by_expert: dict[str, dict[str, int]] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        by_sample: dict[str, dict[str, int]] = {}
        by_expert: dict[str, dict[str, int]] = {}
        for rec in self.records:
            smap = by_sample.setdefault(rec.sample_id, {})
            if rec.expert_id in smap:
                raise ValueError(
                    f"duplicate annotation by {rec.expert_id!r} on {rec.sample_id!r}"
                )
            smap[rec.expert_id] = rec.predicted_label
            by_expert.setdefault(rec.expert_id, {})[rec.sample_id] = rec.predicted_label
        object.__setattr__(self, "by_sample", by_sample)
        object.__setattr__(self, "by_expert", by_expert)

    @property
    def expert_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.by_expert))

    def annotators_of(self, sample_id: str) -> tuple[str, ...]:
        return tuple(sorted(self.by_sample.get(sample_id, ())))

    def annotation(self, expert_id: str, sample_id: str) -> int:
        return self.by_sample[sample_id][expert_id]

    def restrict_to_experts(self, expert_ids: Iterable[str]) -> "AnnotationStore":
        keep = set(expert_ids)
        return AnnotationStore(
            records=tuple(r for r in self.records if r.expert_id in keep)
        )


@dataclass(frozen=True)
class ClassMapping:
    """Total map from fine class indices to contiguous coarse indices."""

    fine_to_coarse: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.fine_to_coarse, dtype=np.int64)
        object.__setattr__(self, "fine_to_coarse", arr)
        if arr.ndim != 1 or arr.size < 2:
            raise ValueError("mapping must cover at least 2 fine classes")
        coarse = np.unique(arr)
        if coarse[0] != 0 or coarse[-1] != coarse.size - 1:
            raise ValueError("coarse labels must be contiguous from 0")

    @property
    def n_fine(self) -> int:
        return self.fine_to_coarse.size

    @property
    def n_coarse(self) -> int:
        return int(self.fine_to_coarse.max()) + 1


@dataclass(frozen=True)
class RunResult:
    """Accuracy and workload of one (strategy, score, alpha, split) cell.

    ``alpha`` is NaN for strategies that never consult a prediction set;
    ``avg_qpe`` is ``None`` when nothing was deferred. ``n_experts_queried``
    is kept so the average is exactly reconstructible from integers.
    """

    strategy: Strategy
    score_kind: ScoreKind
    alpha: float
    split_index: int
    accuracy: float
    n_queries: int
    max_qpe: int
    avg_qpe: float | None
    n_experts_queried: int = 0


def _open_rows(path: str | Path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        rows = [(lineno, row) for lineno, row in enumerate(reader, start=1) if row]
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    header = rows[0][1]
    return header, rows[1:]


def load_probabilities(path: str | Path) -> ProbabilityTable:
    """Load a probability table, validating normalization per row.

    Rows whose probabilities drift from sum 1 by more than 1e-6 but at
    most 1e-3 are renormalized with a warning; larger drift is an error.
    """
    path = Path(path)
    header, rows = _open_rows(path)
    if len(header) < 4 or header[:2] != ["sample_id", "true_label"]:
        raise DataFormatError(f"{path}: line 1: expected header sample_id,true_label,p_0,...")
    n_classes = len(header) - 2
    expected = [f"p_{i}" for i in range(n_classes)]
    if header[2:] != expected:
        raise DataFormatError(f"{path}: line 1: probability columns must be p_0..p_{n_classes - 1}")

    ids: list[str] = []
    seen: dict[str, int] = {}
    truths = np.empty(len(rows), dtype=np.int64)
    probs = np.empty((len(rows), n_classes), dtype=np.float64)
    for out_row, (lineno, row) in enumerate(rows):
        if len(row) != len(header):
            raise DataFormatError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
        sid = row[0]
        if sid in seen:
            raise DataFormatError(
                f"{path}: line {lineno}: duplicate sample_id {sid!r} (first seen line {seen[sid]})"
            )
        seen[sid] = lineno
        try:
            truth = int(row[1])
            vec = np.array([float(v) for v in row[2:]], dtype=np.float64)
        except ValueError as exc:
            raise DataFormatError(f"{path}: line {lineno}: {exc}") from exc
        if not 0 <= truth < n_classes:
            raise DataFormatError(f"{path}: line {lineno}: true_label {truth} out of range")
        try:
            vec, renormed = check_prob_vector(vec)
        except ValueError as exc:
            raise DataFormatError(f"{path}: line {lineno}: {exc}") from exc
        if renormed:
            warnings.warn(f"{path}: line {lineno}: probabilities renormalized", stacklevel=2)
        ids.append(sid)
        truths[out_row] = truth
        probs[out_row] = vec
    return ProbabilityTable(sample_ids=tuple(ids), truths=truths, probs=probs)


def load_annotations(path: str | Path, table: ProbabilityTable) -> AnnotationStore:
    """Load expert annotations, checking referential integrity against
    the companion probability table."""
    path = Path(path)
    header, rows = _open_rows(path)
    if header != ["expert_id", "sample_id", "predicted_label"]:
        raise DataFormatError(f"{path}: line 1: expected header expert_id,sample_id,predicted_label")
    records: list[ExpertRecord] = []
    seen: set[tuple[str, str]] = set()
    for lineno, row in rows:
        if len(row) != 3:
            raise DataFormatError(f"{path}: line {lineno}: expected 3 fields, got {len(row)}")
        expert_id, sample_id, raw_label = row
        if sample_id not in table.index:
            raise DataFormatError(f"{path}: line {lineno}: unknown sample_id {sample_id!r}")
        try:
            label = int(raw_label)
        except ValueError as exc:
            raise DataFormatError(f"{path}: line {lineno}: {exc}") from exc
        if not 0 <= label < table.n_classes:
            raise DataFormatError(f"{path}: line {lineno}: predicted_label {label} out of range")
        key = (expert_id, sample_id)
        if key in seen:
            raise DataFormatError(
                f"{path}: line {lineno}: duplicate annotation {expert_id!r} on {sample_id!r}"
            )
        seen.add(key)
        records.append(ExpertRecord(expert_id, sample_id, label))
    return AnnotationStore(records=tuple(records))


def load_mapping(path: str | Path, n_fine: int) -> ClassMapping:
    """Load a fine-to-coarse class mapping; it must cover every fine class."""
    path = Path(path)
    header, rows = _open_rows(path)
    if header != ["fine_label", "coarse_label"]:
        raise DataFormatError(f"{path}: line 1: expected header fine_label,coarse_label")
    fine_to_coarse = np.full(n_fine, -1, dtype=np.int64)
    for lineno, row in rows:
        if len(row) != 2:
            raise DataFormatError(f"{path}: line {lineno}: expected 2 fields, got {len(row)}")
        try:
            fine, coarse = int(row[0]), int(row[1])
        except ValueError as exc:
            raise DataFormatError(f"{path}: line {lineno}: {exc}") from exc
        if not 0 <= fine < n_fine:
            raise DataFormatError(f"{path}: line {lineno}: fine_label {fine} out of range")
        if fine_to_coarse[fine] != -1:
            raise DataFormatError(f"{path}: line {lineno}: fine_label {fine} mapped twice")
        fine_to_coarse[fine] = coarse
    missing = np.nonzero(fine_to_coarse == -1)[0]
    if missing.size:
        raise DataFormatError(f"{path}: mapping misses fine classes {missing.tolist()}")
    try:
        return ClassMapping(fine_to_coarse=fine_to_coarse)
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


def aggregate_superclasses(table: ProbabilityTable, mapping: ClassMapping) -> ProbabilityTable:
    """Fold a fine-class table into coarse classes.

    Coarse probabilities are the fine sums (ascending fine index within
    each coarse class) renormalized by the row total; truths map through
    the same assignment.
    """
    if mapping.n_fine != table.n_classes:
        raise ValueError(
            f"mapping covers {mapping.n_fine} fine classes, table has {table.n_classes}"
        )
    coarse = np.empty((table.n_samples, mapping.n_coarse), dtype=np.float64)
    for j in range(mapping.n_coarse):
        cols = np.nonzero(mapping.fine_to_coarse == j)[0]
        coarse[:, j] = table.probs[:, cols].sum(axis=1)
    coarse = coarse / coarse.sum(axis=1, keepdims=True)
    truths = mapping.fine_to_coarse[table.truths]
    return ProbabilityTable(sample_ids=table.sample_ids, truths=truths, probs=coarse)


def write_probabilities(table: ProbabilityTable, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "true_label"] + [f"p_{i}" for i in range(table.n_classes)])
        for i, sid in enumerate(table.sample_ids):
            writer.writerow([sid, int(table.truths[i])] + [repr(float(v)) for v in table.probs[i]])
    return path


def write_annotations(store: AnnotationStore, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["expert_id", "sample_id", "predicted_label"])
        for rec in store.records:
            writer.writerow([rec.expert_id, rec.sample_id, rec.predicted_label])
    return path


RESULT_COLUMNS = ["split", "score", "strategy", "alpha", "accuracy", "n_queries", "max_qpe", "avg_qpe"]

# Canonical row order: strategy (declaration order), then alpha, then split.
_STRATEGY_ORDER = {s: i for i, s in enumerate(Strategy)}


def _result_sort_key(r: RunResult) -> tuple[int, float, int]:
    alpha = -1.0 if math.isnan(r.alpha) else r.alpha
    return (_STRATEGY_ORDER[r.strategy], alpha, r.split_index)


def _fmt_float(v: float | None) -> str:
    if v is None:
        return ""
    return repr(float(v))


def write_results(
    results: Sequence[RunResult],
    summaries: Mapping | None,
    out_dir: str | Path,
) -> dict[str, Path]:
    """Write ``results.csv`` (stable row order) and ``summary.json``.

    Undefined averages serialize as empty fields, never as 0. Identical
    inputs produce byte-identical files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "results.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for r in sorted(results, key=_result_sort_key):
            alpha = "" if math.isnan(r.alpha) else _fmt_float(r.alpha)
            writer.writerow(
                [
                    r.split_index,
                    r.score_kind.value,
                    r.strategy.value,
                    alpha,
                    _fmt_float(r.accuracy),
                    r.n_queries,
                    r.max_qpe,
                    _fmt_float(r.avg_qpe),
                ]
            )
    paths = {"results": csv_path}
    if summaries is not None:
        json_path = out_dir / "summary.json"
        with json_path.open("w") as fh:
            json.dump(summaries, fh, indent=2)
            fh.write("\n")
        paths["summary"] = json_path
    return paths


def load_results(path: str | Path) -> list[RunResult]:
    """Read back a ``results.csv`` written by ``write_results``."""
    path = Path(path)
    header, rows = _open_rows(path)
    if header != RESULT_COLUMNS:
        raise DataFormatError(f"{path}: line 1: expected header {','.join(RESULT_COLUMNS)}")
    out: list[RunResult] = []
    for lineno, row in rows:
        if len(row) != len(RESULT_COLUMNS):
            raise DataFormatError(f"{path}: line {lineno}: expected {len(RESULT_COLUMNS)} fields")
        try:
            n_queries = int(row[5])
            avg = None if row[7] == "" else float(row[7])
            out.append(
                RunResult(
                    strategy=Strategy(row[2]),
                    score_kind=ScoreKind(row[1]),
                    alpha=math.nan if row[3] == "" else float(row[3]),
                    split_index=int(row[0]),
                    accuracy=float(row[4]),
                    n_queries=n_queries,
                    max_qpe=int(row[6]),
                    avg_qpe=avg,
                    n_experts_queried=int(round(n_queries / avg)) if avg else 0,
                )
            )
        except ValueError as exc:
            raise DataFormatError(f"{path}: line {lineno}: {exc}") from exc
    return out
