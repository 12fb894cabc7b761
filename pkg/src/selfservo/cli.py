"""Command-line entry point: explore, identify, servo, follow, imitate, bench, plot.

Exit codes: 0 when the command ran (task failures are reported in the
output), 1 for usage or configuration errors, 2 for I/O errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bench import BenchCell, default_matrix, read_csv, run_bench
from .config import RunConfig, load_config
from .evaluation import mrcp_error
from .experiments import Session, follow_c, reaching_suite, record_source_path, translated_config
from .selfrec import ResponsivenessReport, identify, score_all
from .servo import Goal, follow_trajectory, imitate, reach, write_trace
from .sim import ExplorationLog, SimWorld, run_exploration

EXIT_OK, EXIT_USAGE, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_log(path) -> ExplorationLog:
    try:
        return ExplorationLog.from_jsonl(path)
    except (OSError, ValueError) as exc:
        raise InputError(str(exc)) from exc


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from exc


def _resolve(args) -> RunConfig:
    try:
        cfg = load_config(args.config)
    except OSError as exc:
        raise InputError(f"{args.config}: {exc}") from exc
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad config: {exc}") from exc
    sr = {}
    if getattr(args, "noise_variance", None) is not None:
        sr["noise_variance"] = args.noise_variance
    if getattr(args, "top_k", None) is not None:
        sr["top_k"] = args.top_k
    if getattr(args, "stages", None) is not None:
        sr["stages"] = args.stages
    kw = {}
    try:
        if sr:
            kw["selfrec"] = replace(cfg.selfrec, **sr)
        if args.seeds is not None:
            kw["seeds"] = tuple(args.seeds)
        if getattr(args, "n_actions", None) is not None:
            kw["n_actions"] = args.n_actions
        if args.out is not None:
            kw["out"] = args.out
        return replace(cfg, **kw)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"{out}: {exc}") from exc
    return out


def _session(cfg: RunConfig, seed: int, log_path=None, report_path=None) -> Session:
    if log_path is not None:
        log = _load_log(log_path)
        world = SimWorld(log.config, log.seed)
    else:
        world = SimWorld(cfg.world.build(), seed)
        log = run_exploration(world, cfg.n_actions)
    if report_path is not None:
        try:
            report = ResponsivenessReport.from_json(report_path)
        except (OSError, ValueError, KeyError) as exc:
            raise InputError(f"{report_path}: {exc}") from exc
    else:
        report = identify(log, cfg.selfrec_for(log.seed), world)
    return Session(world, log, report)


# ---------------------------------------------------------------- commands


def cmd_explore(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(cfg)
    world_cfg = cfg.world.build()
    for seed in cfg.seeds:
        log = run_exploration(SimWorld(world_cfg, seed), cfg.n_actions)
        path = out / f"log_{seed}.jsonl"
        log.to_jsonl(path)
        full = int(log.full_duration_mask().sum())
        print(f"explore seed={seed} actions={log.n_actions} tracks={len(log.bindings)} "
              f"full_duration={full} -> {path}")
    return EXIT_OK


def cmd_identify(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(cfg)
    from .plotting import plot_identify
    for log_path in args.logs:
        log = _load_log(log_path)
        config = cfg.selfrec_for(log.seed)
        report = identify(log, config, SimWorld(log.config, log.seed), args.action_arm)
        stem = Path(log_path).stem
        report.to_json(out / f"{stem}_report.json")
        coarse = score_all(log, replace(config, stages=1, top_k=1), args.action_arm)
        plot_identify(log, report, out / f"{stem}_identify.svg", coarse.scores)
        err = mrcp_error(log, report)
        x, y, z = report.mrcp_position
        print(f"identify {stem}: mrcp=({x:.2f}, {y:.2f}, {z:.2f}) tip_error_px={err.px:.2f} "
              f"region_hit={err.region_hit} low_confidence={report.low_confidence}")
    return EXIT_OK


def _finite(v):
    return None if v is None or not np.isfinite(v) else float(v)


def _outcome_record(o) -> dict:
    return {"steps": o.steps, "early_terminated": o.early_terminated, "error_px": _finite(o.error_px),
            "error_cm": _finite(o.error_cm), "reinits": o.reinits, "status": o.status}


def cmd_servo(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(cfg)
    seeds = cfg.seeds[:1] if args.log else cfg.seeds
    trace, per_seed, errors, reached, status = [], [], [], [], "ok"
    for seed in seeds:
        session = _session(cfg, seed, args.log, args.report)
        if args.goal is not None:
            session.reset_arm()
            o = reach(session.plant(), None, Goal(tuple(args.goal)), cfg.servo)
            outcomes = [o]
            trace += [{"seed": seed, "goal_index": 0} | r for r in o.trace]
        else:
            summary = reaching_suite(session, config=cfg.servo)
            outcomes = summary.outcomes
            trace += [{"seed": seed} | r for r in summary.trace]
        errs = [np.inf if o.error_cm is None else o.error_cm for o in outcomes]
        errors += errs
        reached += [o.early_terminated for o in outcomes]
        if any(o.status == "lost" for o in outcomes):
            status = "lost"
        per_seed.append({"seed": seed, "median_error_cm": _finite(np.median(errs)),
                         "etr_percent": 100.0 * float(np.mean([o.early_terminated for o in outcomes])),
                         "outcomes": [_outcome_record(o) for o in outcomes]})
    write_trace(out / "servo_trace.jsonl", trace)
    summary = {"median_error_cm": _finite(np.median(errors)), "etr_percent": 100.0 * float(np.mean(reached)),
               "status": status, "per_seed": per_seed}
    _dump(out / "servo_summary.json", summary)
    print(f"servo: median_error_cm={summary['median_error_cm']} etr_percent={summary['etr_percent']:.1f} "
          f"status={status}")
    return EXIT_OK


def _path_outputs(out: Path, name: str, seed: int, outcomes, waypoints) -> dict:
    trace = []
    for wi, o in enumerate(outcomes):
        trace += [{"seed": seed, "waypoint_index": wi} | r for r in o.trace]
    path = [None if o.final_position is None else [float(v) for v in o.final_position] for o in outcomes]
    return {"trace": trace,
            "summary": {"seed": seed, "waypoints": [[None if not np.isfinite(v) else float(v) for v in w]
                                                    for w in np.asarray(waypoints)],
                        "path": path,
                        "reached_fraction": float(np.mean([o.early_terminated for o in outcomes])),
                        "status": "lost" if any(o.status == "lost" for o in outcomes) else "ok",
                        "outcomes": [_outcome_record(o) for o in outcomes]}}


def _finish_paths(out: Path, name: str, results: list[dict]) -> None:
    write_trace(out / f"{name}_trace.jsonl", [r for res in results for r in res["trace"]])
    per_seed = [res["summary"] for res in results]
    fractions = [s["reached_fraction"] for s in per_seed]
    summary = {"reached_fraction": float(np.mean(fractions)),
               "status": "lost" if any(s["status"] == "lost" for s in per_seed) else "ok",
               "per_seed": per_seed}
    _dump(out / f"{name}_summary.json", summary)
    print(f"{name}: reached_fraction={summary['reached_fraction']:.3f} status={summary['status']}")


def cmd_follow(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(cfg)
    waypoints = None
    if args.waypoints:
        data = _load_json(args.waypoints)
        try:
            waypoints = [Goal(tuple(w)) for w in data]
        except (TypeError, ValueError) as exc:
            raise UsageError(f"{args.waypoints}: {exc}") from exc
        if not waypoints:
            raise UsageError("waypoint file is empty")
    results = []
    seeds = cfg.seeds[:1] if args.log else cfg.seeds
    for seed in seeds:
        session = _session(cfg, seed, args.log, args.report)
        if waypoints is None:
            res = follow_c(session, args.radius, args.n_waypoints, cfg.servo)
            outcomes, wps = res.outcomes, res.waypoints
        else:
            session.reset_arm()
            outcomes = follow_trajectory(session.plant(stream=1000), None, waypoints, cfg.servo)
            wps = np.array([g.position for g in waypoints])
        results.append(_path_outputs(out, "follow", seed, outcomes, wps))
    _finish_paths(out, "follow", results)
    return EXIT_OK


def cmd_imitate(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(cfg)
    results = []
    for seed in cfg.seeds:
        if args.source:
            data = _load_json(args.source)
            src = data["per_seed"][0]["path"] if isinstance(data, dict) else data
            try:
                path = np.array([p[:2] for p in src if p is not None], dtype=float)
            except (TypeError, ValueError) as exc:
                raise UsageError(f"{args.source}: {exc}") from exc
        else:
            path = record_source_path(_session(cfg, seed), cfg.servo)
        if len(path) == 0:
            raise UsageError("source trajectory is empty")
        target_world = translated_config(cfg.world.build(), tuple(args.base_offset), args.base_yaw)
        world = SimWorld(target_world, seed)
        log = run_exploration(world, cfg.n_actions)
        target = Session(world, log, identify(log, cfg.selfrec_for(seed), world))
        target.reset_arm()
        outcomes, wps = imitate(path, target.plant(stream=2000), None, cfg.servo, args.scale)
        results.append(_path_outputs(out, "imitate", seed, outcomes, wps))
    _finish_paths(out, "imitate", results)
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(cfg)
    try:
        cells = [BenchCell.from_dict(c) for c in cfg.bench["cells"]] if cfg.bench else default_matrix()
    except (TypeError, KeyError, ValueError) as exc:
        raise UsageError(f"bad bench matrix: {exc}") from exc
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")
    summary = run_bench(cells, list(cfg.seeds), out, args.workers)
    for setting, s in summary["summary"].items():
        px = "nan" if s["error_px_mean"] is None else f"{s['error_px_mean']:.2f}"
        print(f"bench {setting}: error_px={px} success={s['success_rate']:.2f} failures={s['failures']}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plotting import plot_bench, plot_identify, plot_trace
    cfg = _resolve(args)
    out = _out_dir(cfg)
    made = []
    if args.log and args.report:
        log = _load_log(args.log)
        try:
            report = ResponsivenessReport.from_json(args.report)
        except (OSError, ValueError, KeyError) as exc:
            raise InputError(f"{args.report}: {exc}") from exc
        coarse = score_all(log, replace(report.config, stages=1, top_k=1))
        made.append(plot_identify(log, report, out / f"{Path(args.report).stem}.svg", coarse.scores))
    if args.trace:
        try:
            records = [json.loads(l) for l in Path(args.trace).read_text().splitlines() if l.strip()]
        except (OSError, ValueError) as exc:
            raise InputError(f"{args.trace}: {exc}") from exc
        if records and "waypoint_index" in records[0]:
            records = [r | {"goal_index": 0} for r in records]
        made.append(plot_trace(records, out / f"{Path(args.trace).stem}.svg"))
    if args.bench:
        bdir = Path(args.bench)
        summary = _load_json(bdir / "bench_summary.json")
        try:
            rows = read_csv(bdir / "bench.csv")
        except (OSError, ValueError, KeyError) as exc:
            raise InputError(f"{bdir}: {exc}") from exc
        curves_path = bdir / "pr_curves.json"
        curves = _load_json(curves_path) if curves_path.exists() else None
        cells = [BenchCell.from_dict(c) for c in summary["cells"]]
        made += plot_bench(cells, rows, out, curves)
    if not made:
        raise UsageError("nothing to plot: give --log and --report, --trace, or --bench")
    for p in made:
        print(f"plot -> {p}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration; flags override its values")
    seeds = common.add_mutually_exclusive_group()
    seeds.add_argument("--seed", dest="seeds", type=int, action="append", help="seed (repeatable)")
    seeds.add_argument("--seeds", dest="seeds", type=int, nargs="+", help="list of seeds")
    common.add_argument("--out", help="output directory")

    selfrec = argparse.ArgumentParser(add_help=False)
    selfrec.add_argument("--n-actions", type=int, help="exploration length")
    selfrec.add_argument("--noise-variance", type=float, help="tie-breaking noise variance (px^2)")
    selfrec.add_argument("--top-k", type=int, help="MRCP member count")
    selfrec.add_argument("--stages", type=int, choices=(1, 2), help="1 = coarse only, 2 = coarse-to-fine")

    inputs = argparse.ArgumentParser(add_help=False)
    inputs.add_argument("--log", help="reuse an exploration log instead of exploring")
    inputs.add_argument("--report", help="reuse an identification report")

    p = _Parser(prog="selfservo", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("explore", parents=[common, selfrec], help="run random exploration, write a JSONL log")
    s.set_defaults(func=cmd_explore)

    s = sub.add_parser("identify", parents=[common, selfrec], help="score tracks and locate the MRCP")
    s.add_argument("logs", nargs="+", help="exploration log(s)")
    s.add_argument("--action-arm", type=int, default=None, help="arm whose actions to correlate against")
    s.set_defaults(func=cmd_identify)

    s = sub.add_parser("servo", parents=[common, selfrec, inputs], help="reach one goal or the 9-goal suite")
    s.add_argument("--goal", type=float, nargs="+", metavar="V", help="x y [depth]")
    s.set_defaults(func=cmd_servo)

    s = sub.add_parser("follow", parents=[common, selfrec, inputs], help="follow waypoints (default: a C arc)")
    s.add_argument("--waypoints", help="JSON list of [x, y] or [x, y, depth]")
    s.add_argument("--radius", type=float, default=40.0, help="C arc radius (px)")
    s.add_argument("--n-waypoints", type=int, default=12)
    s.set_defaults(func=cmd_follow)

    s = sub.add_parser("imitate", parents=[common, selfrec], help="retrace a source MRCP path on a moved arm")
    s.add_argument("--source", help="follow summary JSON or JSON list of positions")
    s.add_argument("--base-offset", type=float, nargs=3, default=(4.0, 3.0, 0.0), metavar=("DX", "DY", "DZ"))
    s.add_argument("--base-yaw", type=float, default=0.3)
    s.add_argument("--scale", type=float, default=1.0)
    s.set_defaults(func=cmd_imitate)

    s = sub.add_parser("bench", parents=[common, selfrec], help="run the ablation matrix")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("plot", parents=[common], help="render SVGs from existing outputs")
    s.add_argument("--log")
    s.add_argument("--report")
    s.add_argument("--trace")
    s.add_argument("--bench", help="directory holding bench.csv")
    s.set_defaults(func=cmd_plot)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"selfservo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InputError, OSError) as exc:
        print(f"selfservo: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
