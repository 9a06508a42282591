"""Command-line interface.

Subcommands: ``run`` (one miscoverage level), ``grid`` (full miscoverage
grid), ``ablate-experts``, ``ablate-shots``, ``synth``, ``report``.
Data goes to files only; progress and timing go to stderr. Exit codes:
0 success, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .conformal import ScoreKind
from .dataio import (
    DataFormatError,
    aggregate_superclasses,
    load_annotations,
    load_mapping,
    load_probabilities,
    load_results,
    write_annotations,
    write_probabilities,
    write_results,
)
from .evaluation import (
    RunConfig,
    ablate_expert_fraction,
    ablate_shots,
    alpha_grid,
    kept_bottom_fraction,
    run_sweep,
    summarize,
)
from .experts import TieRule
from .policy import Strategy
from .synth import Generalist, Specialist, SynthConfig, gen_dataset

JOBS_ENV_VAR = "CONF_DEFERRAL_JOBS"


class CliValidationError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # exit 1, not argparse's 2
        raise CliValidationError(message)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# Flat run-config keys (JSON file via --config); flags take precedence.
_SWEEP_DEFAULTS = {
    "probs": None, "annotations": None, "mapping": None, "score": "aps",
    "strategies": ",".join(s.value for s in Strategy), "splits": 20,
    "cal_size": 1000, "seed": 0, "tie": "random", "knowledge": "loo",
    "jobs": None, "out": None, "alpha": None, "alphas": None,
    "fractions": None, "shots": "5,10,15,20",
}


def _add_sweep_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="run-config JSON; explicit flags override its keys")
    sub.add_argument("--probs", help="probability table CSV (sample_id,true_label,p_0,...)")
    sub.add_argument("--annotations", help="annotation CSV (expert_id,sample_id,predicted_label)")
    sub.add_argument("--mapping", help="optional fine,coarse class mapping CSV applied to the table first")
    sub.add_argument("--score", choices=[k.value for k in ScoreKind], help="nonconformity score (default aps)")
    sub.add_argument("--strategies", help="comma list of strategies (default: all six)")
    sub.add_argument("--splits", type=int, help="number of calibration/test splits (default 20)")
    sub.add_argument("--cal-size", type=int, help="calibration samples per split (default 1000)")
    sub.add_argument("--seed", type=int, help="master seed (default 0)")
    sub.add_argument("--tie", choices=[t.value for t in TieRule], help="expert tie-breaking rule (default random)")
    sub.add_argument("--knowledge", help="expert knowledge: 'loo' (default) or 'shots:N'")
    sub.add_argument("--jobs", type=int, help=f"worker processes (default ${JOBS_ENV_VAR} or 1)")
    sub.add_argument("--out", help="output directory")


def build_parser() -> _Parser:
    parser = _Parser(prog="conf-deferral", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    p_run = subs.add_parser("run", help="sweep one miscoverage level over N splits")
    _add_sweep_flags(p_run)
    p_run.add_argument("--alpha", type=float, help="single miscoverage level (required)")

    p_grid = subs.add_parser("grid", help="sweep the standard miscoverage grid")
    _add_sweep_flags(p_grid)
    p_grid.add_argument(
        "--alphas",
        help="comma list overriding the grid (default: 0.001 steps up to 1 - model accuracy, then 0.01 steps to 0.99)",
    )

    p_ae = subs.add_parser("ablate-experts", help="re-run keeping only the weakest expert fractions")
    _add_sweep_flags(p_ae)
    p_ae.add_argument("--alphas", help="comma list overriding the grid")
    p_ae.add_argument(
        "--fractions",
        help="comma list of kept fractions (default: descend from 1.0 in 0.05 steps until coverage breaks)",
    )

    p_as = subs.add_parser("ablate-shots", help="re-run under n-shot expert knowledge")
    _add_sweep_flags(p_as)
    p_as.add_argument("--alphas", help="comma list overriding the grid")
    p_as.add_argument("--shots", help="comma list of shots per label per expert (default 5,10,15,20)")

    p_synth = subs.add_parser("synth", help="generate a synthetic dataset")
    p_synth.add_argument("--config", required=True, help="scenario JSON")
    p_synth.add_argument("--out", required=True, help="output directory")

    p_rep = subs.add_parser("report", help="render results.csv into a table and plots")
    p_rep.add_argument("results_csv", help="results.csv produced by run/grid")
    p_rep.add_argument("--out", help="output directory (default: alongside the CSV)")
    return parser


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliValidationError(f"{what} not found: {path}")
    return p


def _merged_options(args: argparse.Namespace) -> dict:
    """Flags layered over the optional run-config JSON over the defaults.

    Config lists (strategies, alphas, fractions, shots) may be JSON
    arrays or comma strings; both normalize to comma strings here.
    """
    config: dict = {}
    if getattr(args, "config", None):
        path = _require_file(args.config, "run config")
        try:
            config = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise CliValidationError(f"{path}: {exc}")
        if not isinstance(config, dict):
            raise CliValidationError(f"{path}: run config must be a JSON object")
        unknown = set(config) - set(_SWEEP_DEFAULTS)
        if unknown:
            raise CliValidationError(
                f"{path}: unknown config keys {sorted(unknown)} "
                f"(known: {sorted(_SWEEP_DEFAULTS)})"
            )
    merged = {}
    for key, default in _SWEEP_DEFAULTS.items():
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
        elif key in config and config[key] is not None:
            value = config[key]
            if isinstance(value, (list, tuple)):
                value = ",".join(str(v) for v in value)
            merged[key] = value
        else:
            merged[key] = default
    for key in ("probs", "annotations", "out"):
        if merged[key] is None:
            raise CliValidationError(f"--{key} is required (flag or config key)")
    return merged


def _parse_strategies(raw: str) -> tuple[Strategy, ...]:
    out = []
    for name in raw.split(","):
        name = name.strip().replace("-", "_")
        try:
            out.append(Strategy(name))
        except ValueError:
            choices = ", ".join(s.value for s in Strategy)
            raise CliValidationError(f"unknown strategy {name!r} (choices: {choices})")
    return tuple(out)


def _parse_knowledge(raw: str) -> int | None:
    if raw == "loo":
        return None
    if raw.startswith("shots:"):
        try:
            shots = int(raw.split(":", 1)[1])
        except ValueError:
            raise CliValidationError(f"bad shots count in {raw!r}")
        if shots < 1:
            raise CliValidationError("shots must be >= 1")
        return shots
    raise CliValidationError(f"--knowledge must be 'loo' or 'shots:N', got {raw!r}")


def _parse_float_list(raw: str, what: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in raw.split(","))
    except ValueError:
        raise CliValidationError(f"bad {what} list: {raw!r}")


def _resolve_jobs(flag: int | None) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get(JOBS_ENV_VAR)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise CliValidationError(f"bad {JOBS_ENV_VAR} value: {env!r}")
    return 1


def _build_config(opts: dict, alphas: tuple[float, ...] | None) -> RunConfig:
    probs_path = _require_file(opts["probs"], "probability table")
    ann_path = _require_file(opts["annotations"], "annotation file")
    table = load_probabilities(probs_path)
    if opts["mapping"]:
        mapping = load_mapping(_require_file(opts["mapping"], "class mapping"), table.n_classes)
        table = aggregate_superclasses(table, mapping)
    store = load_annotations(ann_path, table)
    if alphas is None:
        model_acc = table.argmax_accuracy()
        alphas = alpha_grid(model_acc)
        _log(f"model accuracy {model_acc:.4f}: swept {len(alphas)} miscoverage levels")
    try:
        jobs = opts["jobs"]
        return RunConfig(
            table=table,
            store=store,
            score_kind=ScoreKind(opts["score"]),
            alphas=alphas,
            strategies=_parse_strategies(str(opts["strategies"])),
            tie_rule=TieRule(opts["tie"]),
            master_seed=int(opts["seed"]),
            n_splits=int(opts["splits"]),
            cal_size=int(opts["cal_size"]),
            shots=_parse_knowledge(str(opts["knowledge"])),
            jobs=_resolve_jobs(int(jobs) if jobs is not None else None),
        )
    except ValueError as exc:
        raise CliValidationError(str(exc))


def _grid_alphas(opts: dict) -> tuple[float, ...] | None:
    raw = opts.get("alphas")
    if raw:
        values = _parse_float_list(str(raw), "alpha")
        return tuple(sorted(values))
    return None


def _sweep_and_write(config: RunConfig, out_dir: str) -> int:
    start = time.perf_counter()
    results = run_sweep(config)
    _log(f"sweep finished in {time.perf_counter() - start:.1f}s ({len(results)} result rows)")
    paths = write_results(results, summarize(results), out_dir)
    _log(f"wrote {paths['results']} and {paths['summary']}")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    opts = _merged_options(args)
    if opts["alpha"] is None:
        raise CliValidationError("--alpha is required (flag or config key)")
    alpha = float(opts["alpha"])
    if not 0.0 < alpha < 1.0:
        raise CliValidationError(f"--alpha must be in (0, 1), got {alpha}")
    config = _build_config(opts, (alpha,))
    return _sweep_and_write(config, opts["out"])


def _cmd_grid(args: argparse.Namespace) -> int:
    opts = _merged_options(args)
    config = _build_config(opts, _grid_alphas(opts))
    return _sweep_and_write(config, opts["out"])


def _auto_fractions(config: RunConfig) -> tuple[float, ...]:
    """Descend from 1.0 in 0.05 steps; stop before coverage breaks."""
    valid: list[float] = []
    for i in range(20, 0, -1):
        f_kept = i / 20
        kept = kept_bottom_fraction(config.store, config.table, f_kept)
        sub = config.store.restrict_to_experts(kept)
        if any(not sub.annotators_of(sid) for sid in config.table.sample_ids):
            break
        valid.append(f_kept)
    if not valid:
        raise CliValidationError("even f_kept=1.0 leaves samples without annotators")
    return tuple(valid)


def _write_ablation(
    out_dir: Path, kind: str, runs: dict, label_fmt: str
) -> None:
    points = {}
    for key, results in runs.items():
        summary = summarize(results)
        write_results(results, summary, out_dir / label_fmt.format(key))
        points[str(key)] = summary
    with (out_dir / "ablation.json").open("w") as fh:
        json.dump({"kind": kind, "points": points}, fh, indent=2)
        fh.write("\n")
    _log(f"wrote {out_dir / 'ablation.json'} and {len(points)} per-point result dirs")


def _cmd_ablate_experts(args: argparse.Namespace) -> int:
    opts = _merged_options(args)
    config = _build_config(opts, _grid_alphas(opts))
    if opts["fractions"]:
        fractions = _parse_float_list(str(opts["fractions"]), "fraction")
        for f in fractions:
            if not 0.0 < f <= 1.0:
                raise CliValidationError(f"fractions must be in (0, 1], got {f}")
    else:
        fractions = _auto_fractions(config)
        _log(f"valid kept fractions: {fractions[-1]:.2f}..{fractions[0]:.2f}")
    runs = ablate_expert_fraction(config, fractions)
    _write_ablation(Path(opts["out"]), "expert_fraction", runs, "fkept_{:.2f}")
    return 0


def _cmd_ablate_shots(args: argparse.Namespace) -> int:
    opts = _merged_options(args)
    config = _build_config(opts, _grid_alphas(opts))
    raw_shots = str(opts["shots"])
    try:
        shots = tuple(int(v) for v in raw_shots.split(","))
    except ValueError:
        raise CliValidationError(f"bad shots list: {raw_shots!r}")
    if any(s < 1 for s in shots):
        raise CliValidationError("shots must be >= 1")
    runs = ablate_shots(config, shots)
    _write_ablation(Path(opts["out"]), "shots", runs, "shots_{:02d}")
    return 0


def _expert_from_json(obj: dict, lineno: int):
    kind = obj.get("kind")
    common = {
        "coverage": float(obj.get("coverage", 1.0)),
        "cost": float(obj.get("cost", 1.0)),
    }
    if kind == "generalist":
        return Generalist(accuracy=float(obj["accuracy"]), **common)
    if kind == "specialist":
        return Specialist(
            block=tuple(int(c) for c in obj["block"]),
            inside_accuracy=float(obj["inside_accuracy"]),
            outside_accuracy=float(obj["outside_accuracy"]),
            **common,
        )
    raise CliValidationError(f"expert #{lineno}: kind must be 'generalist' or 'specialist'")


def _cmd_synth(args: argparse.Namespace) -> int:
    config_path = _require_file(args.config, "scenario config")
    try:
        raw = json.loads(config_path.read_text())
    except json.JSONDecodeError as exc:
        raise CliValidationError(f"{config_path}: {exc}")
    try:
        experts = tuple(
            _expert_from_json(obj, i) for i, obj in enumerate(raw.get("experts", []))
        )
        blocks = raw.get("blocks")
        cfg = SynthConfig(
            n_classes=int(raw["classes"]),
            n_samples=int(raw["samples"]),
            model_target_accuracy=float(raw["model_accuracy"]),
            confusion_sharpness=float(raw.get("sharpness", 1.0)),
            experts=experts,
            seed=int(raw.get("seed", 0)),
            confusable_blocks=(
                tuple(tuple(int(c) for c in b) for b in blocks) if blocks else None
            ),
            block_mass=float(raw.get("block_mass", 0.85)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CliValidationError(f"{config_path}: invalid scenario: {exc}")
    table, store = gen_dataset(cfg)
    out = Path(args.out)
    probs_path = write_probabilities(table, out / "probs.csv")
    ann_path = write_annotations(store, out / "annotations.csv")
    _log(f"wrote {probs_path} ({table.n_samples} samples) and {ann_path} ({len(store.records)} annotations)")
    return 0


def _significance_marker(block: dict | None) -> str:
    if not block:
        return ""
    mark = "*" if block["test_used"] == "paired_t" else "o"
    return mark * block["stars"]


def _render_table(summary: dict) -> str:
    header = (
        f"{'strategy':<22} {'alpha_opt':>9} {'accuracy [%]':>16} "
        f"{'queries':>14} {'max q/e':>12} {'avg q/e':>12} {'sig':>6} {'compl':>6}"
    )
    lines = [f"score: {summary['score']}", header, "-" * len(header)]
    for name, block in summary["strategies"].items():
        alpha_opt = "-" if block["alpha_opt"] is None else f"{block['alpha_opt']:g}"
        acc = f"{100 * block['accuracy_mean']:.2f}±{100 * block['accuracy_sd']:.2f}"
        queries = f"{block['n_queries_mean']:.1f}±{block['n_queries_sd']:.1f}"
        max_q = f"{block['max_qpe_mean']:.2f}±{block['max_qpe_sd']:.2f}"
        if block["avg_qpe_mean"] is None:
            avg_q = "-"
        else:
            avg_q = f"{block['avg_qpe_mean']:.2f}±{block['avg_qpe_sd']:.2f}"
        sig = block["significance"]
        compl = "" if sig is None else ("yes" if sig["complementarity"] else "no")
        lines.append(
            f"{name:<22} {alpha_opt:>9} {acc:>16} {queries:>14} {max_q:>12} "
            f"{avg_q:>12} {_significance_marker(sig):>6} {compl:>6}"
        )
    return "\n".join(lines) + "\n"


def _plot_curves(results, out_dir: Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "conf-deferral"
    import matplotlib.pyplot as plt

    by_strategy: dict[Strategy, dict[float, list]] = {}
    for r in results:
        if math.isnan(r.alpha):
            continue
        by_strategy.setdefault(r.strategy, {}).setdefault(r.alpha, []).append(r)

    def curve(strategy, attr):
        cells = by_strategy[strategy]
        xs = sorted(cells)
        means, halfwidths = [], []
        for a in xs:
            vals = [getattr(r, attr) for r in cells[a] if getattr(r, attr) is not None]
            if not vals:
                means.append(np.nan)
                halfwidths.append(0.0)
                continue
            arr = np.asarray(vals, dtype=np.float64)
            sd = arr.std(ddof=1) if arr.size > 1 else 0.0
            means.append(arr.mean())
            halfwidths.append(1.96 * sd / math.sqrt(arr.size))
        return np.asarray(xs), np.asarray(means), np.asarray(halfwidths)

    paths = []
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for strategy in Strategy:
        if strategy not in by_strategy:
            continue
        xs, means, hw = curve(strategy, "accuracy")
        ax.plot(xs, means, label=strategy.value)
        ax.fill_between(xs, means - hw, means + hw, alpha=0.2)
    ax.set_xlabel("miscoverage")
    ax.set_ylabel("accuracy")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = out_dir / "accuracy_vs_alpha.svg"
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
    paths.append(path)

    fig, axes = plt.subplots(3, 1, figsize=(7, 9), sharex=True)
    for ax, attr, label in zip(
        axes, ("n_queries", "max_qpe", "avg_qpe"),
        ("total queries", "max queries/expert", "avg queries/queried expert"),
    ):
        for strategy in Strategy:
            if strategy not in by_strategy:
                continue
            xs, means, hw = curve(strategy, attr)
            ax.plot(xs, means, label=strategy.value)
            ax.fill_between(xs, means - hw, means + hw, alpha=0.2)
        ax.set_ylabel(label)
    axes[-1].set_xlabel("miscoverage")
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    path = out_dir / "workload_vs_alpha.svg"
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
    paths.append(path)
    return paths


def _cmd_report(args: argparse.Namespace) -> int:
    csv_path = _require_file(args.results_csv, "results file")
    results = load_results(csv_path)
    if not results:
        raise CliValidationError(f"{csv_path}: no result rows")
    out_dir = Path(args.out) if args.out else csv_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = summarize(results)
    report_path = out_dir / "report.txt"
    report_path.write_text(_render_table(summary))
    plot_paths = _plot_curves(results, out_dir)
    _log(f"wrote {report_path} and {', '.join(str(p) for p in plot_paths)}")
    return 0


_HANDLERS = {
    "run": _cmd_run,
    "grid": _cmd_grid,
    "ablate-experts": _cmd_ablate_experts,
    "ablate-shots": _cmd_ablate_shots,
    "synth": _cmd_synth,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliValidationError as exc:
        _log(f"error: {exc}")
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return _HANDLERS[args.command](args)
    except (CliValidationError, DataFormatError) as exc:
        _log(f"error: {exc}")
        return 1
    except Exception as exc:
        _log(f"error: {exc}")
        return 2


def console_main() -> None:
    sys.exit(main())
