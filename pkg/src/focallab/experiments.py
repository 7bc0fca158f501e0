"""Corpus generation, single runs and grid sweeps with on-disk artifacts.

Layout under ``<output_dir>/<name>/``::

    config.ini  manifest.json  corpus/  shallow.ckpt
    runs/g<gamma>_i<n>_s<seed>/{history.csv,eval.csv,params.ckpt,
                                prob_hist.csv,loss_hist.csv,manifest.json}
    results.csv  table1.csv  table2.csv  table4.csv
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from . import __version__
from .config import ExperimentConfig, dump_config
from .datagen import (
    GENERATOR_VERSION,
    HeuristicKind,
    Subcase,
    apply_hardness,
    generate_corpus,
    inject_challenge_samples,
    load_corpus,
    save_corpus,
)
from .evaluator import cell_name, evaluate, summarize
from .losses import LossKind
from .netmodel import View, load_params, save_params
from .trainer import BiasSource, TrainingDiverged, train_bias_model, train_run

log = logging.getLogger(__name__)

HEADLINE_METRICS = ("test_acc", "hard_acc", "challenge_acc")
CELL_METRICS = tuple(f"challenge:{cell_name(k, s)}" for k in HeuristicKind for s in Subcase)
TABLE_COLUMNS = ("row_type", "gamma", "n_injected", "seed", "metric", "mean", "std", "n_runs")
RESULT_COLUMNS = ("row_type", "metric", "gamma", "n_injected", "seed", "value", "std", "n_runs")


def _num(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def run_name(gamma: float, n_inject: int, seed: int) -> str:
    return f"g{gamma:g}_i{n_inject}_s{seed}"


def corpus_dir(cfg: ExperimentConfig) -> Path:
    return cfg.experiment_dir / "corpus"


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_generate(cfg: ExperimentConfig) -> Path:
    """Write the corpus (with hardness labels) and the experiment manifest."""
    out = cfg.experiment_dir
    out.mkdir(parents=True, exist_ok=True)
    bundle = generate_corpus(cfg.gen)
    shallow = train_bias_model(bundle, cfg.model, cfg.gen.seed, train_spec=cfg.train)
    bundle = apply_hardness(bundle, shallow)
    save_corpus(bundle, corpus_dir(cfg))
    save_params(shallow, out / "shallow.ckpt")
    (out / "config.ini").write_text(dump_config(cfg), encoding="utf-8")
    _write_json(out / "manifest.json", {
        "config_sha256": cfg.digest(),
        "package_version": __version__,
        "generator_version": GENERATOR_VERSION,
        "seed": cfg.gen.seed,
        "hard_test_examples": int((bundle.test.hard == 1).sum()),
    })
    return out


def _load_corpus(cfg: ExperimentConfig):
    path = corpus_dir(cfg)
    if not (path / "manifest.json").exists():
        raise FileNotFoundError(f"corpus not found: expected {path / 'manifest.json'} (run 'generate' first)")
    return load_corpus(path)


@dataclass
class RunResult:
    name: str
    gamma: float
    n_injected: int
    seed: int
    status: str
    metrics: dict[str, float]
    message: str = ""


def cmd_run(cfg: ExperimentConfig, gamma: float, n_inject: int, seed: int, bundle=None) -> RunResult:
    """Train and evaluate one (gamma, injection, seed) cell; artifacts go to its run dir."""
    if bundle is None:
        bundle = _load_corpus(cfg)
    name = run_name(gamma, n_inject, seed)
    run_dir = cfg.experiment_dir / "runs" / name
    run_dir.mkdir(parents=True, exist_ok=True)
    spec = replace(cfg.train, loss=replace(cfg.train.loss, gamma=float(gamma)), seed=seed)
    injected = inject_challenge_samples(bundle, n_inject, seed)

    manifest = {
        "run": name,
        "gamma": float(gamma),
        "n_injected": n_inject,
        "seed": seed,
        "loss": spec.loss.kind.value,
        "baseline": spec.loss.effective_gamma == 0.0 and spec.loss.kind in (LossKind.FOCAL, LossKind.CROSS_ENTROPY),
        "early_stopping": spec.early_stopping,
        "config_sha256": cfg.digest(),
    }
    bias_params = None
    if spec.bias_model_source is BiasSource.TRAIN_SHORTCUT_ONLY_FIRST:
        bias_params = train_bias_model(injected, cfg.model, seed, train_spec=spec)
        save_params(bias_params, run_dir / "bias.ckpt")
    try:
        params, history = train_run(injected, cfg.model, spec, bias_params=bias_params)
    except TrainingDiverged as exc:
        manifest.update(status="diverged", message=str(exc))
        _write_json(run_dir / "manifest.json", manifest)
        return RunResult(name, float(gamma), n_inject, seed, "diverged", {}, str(exc))

    history.write_csv(run_dir / "history.csv")
    save_params(params, run_dir / "params.ckpt")
    report = evaluate(params, injected.test, injected.challenge, spec.loss)
    metrics = report.metrics()
    with open(run_dir / "eval.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k, v in metrics.items():
            w.writerow([k, _num(v)])
    report.prob_histogram.write_csv(run_dir / "prob_hist.csv")
    report.loss_histogram.write_csv(run_dir / "loss_hist.csv")
    manifest.update(status="ok", best_epoch=history.best_epoch, epochs_run=len(history.records))
    _write_json(run_dir / "manifest.json", manifest)
    return RunResult(name, float(gamma), n_inject, seed, "ok", metrics)


def read_run_metrics(run_dir) -> dict[str, float]:
    out = {}
    with open(Path(run_dir) / "eval.csv", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[row["metric"]] = float(row["value"]) if row["value"] else math.nan
    return out


def _grid(cfg: ExperimentConfig):
    return [(g, n, s) for n in cfg.injection_grid for g in cfg.gamma_grid for s in cfg.seeds]


_WORKER_BUNDLE = None


def _worker_init(cfg: ExperimentConfig) -> None:
    global _WORKER_BUNDLE
    _WORKER_BUNDLE = _load_corpus(cfg)


def _worker_run(cfg: ExperimentConfig, triple) -> RunResult:
    g, n, s = triple
    try:
        return cmd_run(cfg, g, n, s, bundle=_WORKER_BUNDLE)
    except Exception as exc:  # a failed cell must not sink the sweep
        return RunResult(run_name(g, n, s), float(g), n, s, "failed", {}, f"{type(exc).__name__}: {exc}")


def cmd_sweep(cfg: ExperimentConfig) -> list[RunResult]:
    """Run the whole grid, then write the result and aggregate tables."""
    bundle = _load_corpus(cfg)
    triples = _grid(cfg)
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers, initializer=_worker_init, initargs=(cfg,)) as pool:
            results = list(pool.map(_worker_run, [cfg] * len(triples), triples))
    else:
        results = []
        for g, n, s in triples:
            try:
                results.append(cmd_run(cfg, g, n, s, bundle=bundle))
            except Exception as exc:
                results.append(RunResult(run_name(g, n, s), float(g), n, s, "failed", {},
                                         f"{type(exc).__name__}: {exc}"))
            log.info("run %s: %s", results[-1].name, results[-1].status)
    write_tables(cfg, results)
    return results


def write_tables(cfg: ExperimentConfig, results: list[RunResult]) -> None:
    out = cfg.experiment_dir
    ok = [r for r in results if r.status == "ok"]
    _write_results(out / "results.csv", cfg, ok)
    zero_inj = [r for r in ok if r.n_injected == 0]
    _write_table(out / "table1.csv", cfg, zero_inj, HEADLINE_METRICS, injections=(0,))
    _write_table(out / "table2.csv", cfg, ok, HEADLINE_METRICS, injections=cfg.injection_grid)
    _write_table(out / "table4.csv", cfg, ok, CELL_METRICS, injections=cfg.injection_grid)
    manifest_path = out / "manifest.json"
    manifest = json.loads(manifest_path.read_text(encoding="utf-8")) if manifest_path.exists() else {}
    manifest["sweep"] = {
        "config_sha256": cfg.digest(),
        "runs": {r.name: {"status": r.status, **({"message": r.message} if r.message else {})} for r in results},
        "completed": len(ok),
        "failed": len(results) - len(ok),
    }
    _write_json(manifest_path, manifest)


def _groups(results, injections):
    groups: dict[tuple[float, int], list[RunResult]] = {}
    for r in results:
        if r.n_injected in injections:
            groups.setdefault((r.gamma, r.n_injected), []).append(r)
    return groups


def _write_table(path: Path, cfg: ExperimentConfig, results, metrics, injections) -> None:
    """Run rows (one per run, metric columns) followed by aggregate rows (one per cell and metric)."""
    columns = ("row_type", "gamma", "n_injected", "seed") + tuple(metrics) + ("metric", "mean", "std", "n_runs")
    order = {(g, n): i for i, (n, g) in enumerate((n, g) for n in cfg.injection_grid for g in cfg.gamma_grid)}
    results = sorted(results, key=lambda r: (order.get((r.gamma, r.n_injected), 1 << 30), r.seed))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in results:
            w.writerow(["run", _num(r.gamma), r.n_injected, r.seed]
                       + [_num(r.metrics.get(m, math.nan)) for m in metrics] + ["", "", "", ""])
        for (g, n), members in sorted(_groups(results, injections).items(), key=lambda kv: order[kv[0]]):
            for m in metrics:
                s = summarize([r.metrics.get(m, math.nan) for r in members])
                w.writerow(["aggregate", _num(g), n, ""] + [""] * len(metrics)
                           + [m, _num(s.mean), _num(s.std), s.n_runs])


def _write_results(path: Path, cfg: ExperimentConfig, results) -> None:
    """Long format: one row per (metric, gamma, n_injected, seed) plus aggregate rows."""
    results = sorted(results, key=lambda r: (cfg.injection_grid.index(r.n_injected),
                                             cfg.gamma_grid.index(r.gamma), r.seed))
    metrics = list(results[0].metrics) if results else []
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in results:
            for m in metrics:
                w.writerow(["run", m, _num(r.gamma), r.n_injected, r.seed, _num(r.metrics.get(m, math.nan)), "", ""])
        groups = _groups(results, cfg.injection_grid)
        for n in cfg.injection_grid:
            for g in cfg.gamma_grid:
                members = groups.get((float(g), n), [])
                if not members:
                    continue
                for m in metrics:
                    s = summarize([r.metrics.get(m, math.nan) for r in members])
                    w.writerow(["aggregate", m, _num(g), n, "", _num(s.mean), _num(s.std), s.n_runs])


def read_table(path) -> tuple[list[dict], list[dict]]:
    """Split a table CSV into its run rows and aggregate rows."""
    runs, aggs = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            (runs if row["row_type"] == "run" else aggs).append(row)
    return runs, aggs


def aggregate_lookup(path) -> dict[tuple[float, int, str], tuple[float, float | None, int]]:
    _, aggs = read_table(path)
    out = {}
    for row in aggs:
        std = float(row["std"]) if row["std"] else None
        # table CSVs call the column "mean", results.csv calls it "value"
        raw = row.get("mean", row.get("value"))
        mean = float(raw) if raw else math.nan
        out[(float(row["gamma"]), int(row["n_injected"]), row["metric"])] = (mean, std, int(row["n_runs"]))
    return out


def format_report(cfg: ExperimentConfig) -> str:
    """Plain-text mean ± std tables from the sweep CSVs."""
    out = cfg.experiment_dir
    lines = []
    for table, metrics in (("table1.csv", HEADLINE_METRICS), ("table2.csv", HEADLINE_METRICS),
                           ("table4.csv", CELL_METRICS)):
        path = out / table
        if not path.exists():
            raise FileNotFoundError(f"missing sweep artifact: {path} (run 'sweep' first)")
        agg = aggregate_lookup(path)
        cells = sorted({(g, n) for g, n, _ in agg}, key=lambda gn: (gn[1], gn[0]))
        lines.append(f"== {table}")
        lines.append("gamma  n_inj  " + "  ".join(f"{m.split(':')[-1]:>26}" for m in metrics))
        for g, n in cells:
            parts = []
            for m in metrics:
                mean, std, _ = agg.get((g, n, m), (math.nan, None, 0))
                txt = f"{100 * mean:6.2f}" + (f" ± {100 * std:5.2f}" if std is not None else "        ")
                parts.append(f"{txt:>26}")
            lines.append(f"{g:5g}  {n:5d}  " + "  ".join(parts))
        lines.append("")
    return "\n".join(lines)


def load_run_params(run_dir) -> tuple:
    run_dir = Path(run_dir)
    path = run_dir / "params.ckpt"
    if not path.exists():
        raise FileNotFoundError(f"missing run artifact: {path}")
    return load_params(path)


def shallow_params(cfg: ExperimentConfig):
    path = cfg.experiment_dir / "shallow.ckpt"
    if not path.exists():
        raise FileNotFoundError(f"missing shallow model checkpoint: {path}")
    params = load_params(path)
    if params.view is not View.SHORTCUT_ONLY:
        raise ValueError(f"{path} is not a shortcut-only checkpoint")
    return params

