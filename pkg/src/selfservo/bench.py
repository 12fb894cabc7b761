"""Ablation benchmark: a matrix of self-recognition settings run over seeds.

Each (cell, seed) task builds its own world, so tasks are independent and
may run in worker processes. Rows come back in task order regardless of
the worker count, which keeps every output file byte-identical.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .config import WorldSpec
from .evaluation import body_pr_area, mrcp_error, precision_recall
from .selfrec import SelfRecConfig, identify, score_all, static_variance_threshold
from .sim import SimWorld, run_exploration

CSV_FIELDS = ("setting", "seed", "error_px", "error_cm", "success", "pr_area", "status")


@dataclass(frozen=True)
class BenchCell:
    setting: str
    family: str = ""
    noise: str = "default"
    tool: str = "none"
    n_actions: int = 100
    stages: int = 2
    noise_variance: float = 1.6
    top_k: int = 15
    outlier: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> BenchCell:
        return cls(**d)

    def params(self) -> tuple:
        return (self.noise, self.tool, self.n_actions, self.stages, self.noise_variance,
                self.top_k, self.outlier)


def default_matrix() -> list[BenchCell]:
    """Stage, noise and top-k ablations plus exploration length and outlier removal.

    Stage and noise cells use the marker rig, where the tip is hardest to
    localise. Top-k cells use the bare arm, where dropout rather than tool
    geometry dominates the error.
    """
    cells = [BenchCell(f"stages={s}", "stages", tool="marker", stages=s) for s in (1, 2)]
    cells += [BenchCell(f"noise_variance={v:g}", "noise_variance", tool="marker", noise_variance=v)
              for v in (0.0, 0.4, 0.8, 1.6, 1e6)]
    cells += [BenchCell(f"top_k={k}", "top_k", top_k=k) for k in (1, 5, 15)]
    cells += [BenchCell(f"n_actions={n}", "n_actions", n_actions=n) for n in (25, 50, 100)]
    cells += [BenchCell(f"outlier={'on' if o else 'off'}", "outlier", outlier=o) for o in (False, True)]
    return cells


def _failed(cell: BenchCell, seed: int, exc: Exception) -> dict:
    return {"setting": cell.setting, "seed": seed, "error_px": math.nan, "error_cm": math.nan,
            "success": False, "pr_area": math.nan, "status": f"error: {exc}", "pr_curve": None}


def run_task(cell: BenchCell, seed: int) -> dict:
    """Explore, identify and score one cell for one seed."""
    try:
        world = SimWorld(WorldSpec(noise=cell.noise, tool=cell.tool).build(), seed)
        log = run_exploration(world, cell.n_actions)
        threshold = static_variance_threshold(world.config.tracker.jitter_std) if cell.outlier else 0.0
        config = SelfRecConfig(noise_variance=cell.noise_variance, top_k=cell.top_k, stages=cell.stages,
                               outlier_variance_threshold=threshold, seed=seed)
        report = identify(log, config, world)
        err = mrcp_error(log, report)
        coarse = score_all(log, replace(config, stages=1, top_k=1))
        full = log.full_duration_mask()
        precision, recall = precision_recall(coarse.scores[full], log.body_mask[full])
        return {"setting": cell.setting, "seed": seed, "error_px": err.px, "error_cm": err.cm,
                "success": err.region_hit, "pr_area": body_pr_area(log, coarse.scores), "status": "ok",
                "pr_curve": [recall.tolist(), precision.tolist()]}
    except Exception as exc:  # partial results: a failed cell becomes a row
        return _failed(cell, seed, exc)


def _run_unique(args):
    return run_task(*args)


def run_matrix(cells: list[BenchCell], seeds: list[int], workers: int = 1) -> list[dict]:
    """Rows for every (cell, seed), in cell-major order.

    Cells with identical parameters are computed once and relabelled.
    """
    unique: dict[tuple, BenchCell] = {}
    for c in cells:
        unique.setdefault(c.params(), c)
    tasks = [(c, s) for c in unique.values() for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_unique, tasks))
    else:
        results = [_run_unique(t) for t in tasks]
    by_key = {(c.params(), s): r for (c, s), r in zip(tasks, results)}
    return [by_key[(c.params(), s)] | {"setting": c.setting} for c in cells for s in seeds]


def summarize(cells: list[BenchCell], rows: list[dict]) -> dict:
    """Per-setting mean and standard deviation over seeds."""
    out = {}
    for c in cells:
        rs = [r for r in rows if r["setting"] == c.setting]
        entry = {"family": c.family, "n": len(rs), "failures": sum(r["status"] != "ok" for r in rs),
                 "success_rate": float(np.mean([r["success"] for r in rs]))}
        for key in ("error_px", "error_cm", "pr_area"):
            vals = np.array([r[key] for r in rs], dtype=float)
            vals = vals[np.isfinite(vals)]
            entry[f"{key}_mean"] = float(vals.mean()) if len(vals) else None
            entry[f"{key}_std"] = float(vals.std()) if len(vals) else None
        out[c.setting] = entry
    return out


def write_csv(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(r[k])) if k in ("error_px", "error_cm", "pr_area") else r[k])
                        for k in CSV_FIELDS})


def read_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["seed"] = int(r["seed"])
        r["success"] = r["success"] == "True"
        for k in ("error_px", "error_cm", "pr_area"):
            r[k] = float(r[k])
    return rows


def run_bench(cells: list[BenchCell], seeds: list[int], out_dir: str | Path, workers: int = 1,
              plots: bool = True) -> dict:
    """Run the matrix and write ``bench.csv``, ``bench_summary.json`` and plots."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_matrix(cells, list(seeds), workers)
    write_csv(out / "bench.csv", rows)
    summary = {"cells": [asdict(c) for c in cells], "seeds": list(seeds), "summary": summarize(cells, rows)}
    (out / "bench_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    curves = {f"{r['setting']}|{r['seed']}": r["pr_curve"] for r in rows if r.get("pr_curve")}
    (out / "pr_curves.json").write_text(json.dumps(curves, sort_keys=True) + "\n")
    if plots:
        from .plotting import plot_bench
        plot_bench(cells, rows, out, curves)
    return summary
