"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Every criterion runs at its stated tolerance and seed count; the lines are
repeated in the pytest terminal summary.
"""

import hashlib
import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import gaussian_mi
from selfservo.bench import BenchCell, default_matrix, run_matrix
from selfservo.cli import main
from selfservo.evaluation import mrcp_error
from selfservo.experiments import (default_session, follow_c, imitation, reaching_suite, recognize,
                                   translated_config)
from selfservo.mi import MiConfig, SampleSet, ksg_mi
from selfservo.selfrec import SelfRecConfig, identify, max_motion_baseline
from selfservo.servo import Goal, LinearPlant, batched_update, broyden_update, init_jacobian, mrcp_displacement, reach
from selfservo.sim import SimWorld, default_world_config, run_exploration

SEEDS20 = list(range(20))
SEEDS10 = list(range(10))

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def matrix_rows():
    """The default ablation matrix over 20 seeds, shared by criteria 4, 6 and 7."""
    cells = default_matrix()
    rows = run_matrix(cells, SEEDS20)
    return {c.setting: [r for r in rows if r["setting"] == c.setting] for c in cells}


def _mean(rows, key="error_px"):
    return float(np.mean([r[key] for r in rows]))


def test_criterion_1_estimator(record_criterion):
    ests, indep = [], []
    t0 = time.perf_counter()
    for seed in SEEDS20:
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(2000)
        y = 0.9 * x + math.sqrt(1 - 0.81) * rng.standard_normal(2000)
        ests.append(ksg_mi(SampleSet(x, y), MiConfig(k=3, rng_seed=seed)))
        indep.append(ksg_mi(SampleSet(rng.standard_normal(2000), rng.standard_normal(2000)),
                            MiConfig(k=3, rng_seed=seed)))
    per_call = (time.perf_counter() - t0) / 40
    dep, ind = float(np.mean(ests)), float(np.mean(indep))
    ok = abs(dep - gaussian_mi(0.9)) <= 0.1 and abs(ind) <= 0.05 and per_call < 5
    record_criterion(1, ok, f"rho=0.9 mean {dep:.4f} (oracle {gaussian_mi(0.9):.4f}), "
                            f"independent mean {ind:+.4f}, {per_call:.3f} s per estimate")
    assert ok


def test_criterion_2_noiseless_exactness(record_criterion):
    hits = 0
    for seed in SEEDS10:
        world = SimWorld(default_world_config("none"), seed)
        log = run_exploration(world, 100)
        report = identify(log, SelfRecConfig(seed=seed), world)
        last = len(world.config.controlled_arm.links) - 1
        ci = world.controlled_index
        hits += all(b.arm == ci and b.link == last for b in report.member_bindings)
    record_criterion(2, hits == 10, f"all members on the last link in {hits}/10 seeds")
    assert hits == 10


def test_criterion_3_noisy_region(record_criterion):
    hits = 0
    for seed in SEEDS20:
        world = SimWorld(default_world_config("default"), seed)
        log = run_exploration(world, 100)
        hits += mrcp_error(log, identify(log, SelfRecConfig(seed=seed), world)).region_hit
    rate = hits / len(SEEDS20)
    record_criterion(3, rate >= 0.9, f"end-effector region hit in {hits}/20 seeds ({rate:.0%})")
    assert rate >= 0.9


def test_criterion_4_ablation_orderings(matrix_rows, record_criterion):
    s1, s2 = _mean(matrix_rows["stages=1"]), _mean(matrix_rows["stages=2"])
    sweep = [_mean(matrix_rows[f"noise_variance={v:g}"]) for v in (0.0, 0.4, 0.8, 1.6)]
    huge = _mean(matrix_rows["noise_variance=1e+06"])
    top = {k: _mean(matrix_rows[f"top_k={k}"]) for k in (1, 5, 15)}
    stages_ok = s2 <= s1
    sweep_ok = all(b <= a for a, b in zip(sweep, sweep[1:])) and huge > sweep[-1]
    topk_ok = top[15] <= top[1]
    ok = stages_ok and sweep_ok and topk_ok
    record_criterion(4, ok, f"stages 1/2 = {s1:.1f}/{s2:.1f} px; noise 0/0.4/0.8/1.6/1e6 = "
                            + "/".join(f"{v:.1f}" for v in sweep) + f"/{huge:.1f} px; "
                            f"top-1/5/15 = {top[1]:.1f}/{top[5]:.1f}/{top[15]:.1f} px")
    assert stages_ok, (s1, s2)
    assert sweep_ok, (sweep, huge)
    assert topk_ok, top


def test_criterion_5_distractor(record_criterion):
    own = decoy = baseline_decoy = 0
    for seed in SEEDS10:
        world = SimWorld(default_world_config("default", decoy=True), seed)
        log = run_exploration(world, 100)
        for arm in (0, 1):
            report = identify(log, SelfRecConfig(seed=seed), world, action_arm=arm)
            hit = mrcp_error(log, report, arm=arm).on_arm == arm
            own += hit and arm == 0
            decoy += hit and arm == 1
        full = np.flatnonzero(log.full_duration_mask())
        _, order = max_motion_baseline(log.tracks, 15)
        hosts = [log.bindings[full[i]].arm for i in order]
        baseline_decoy += hosts.count(1) > len(hosts) / 2
    ok = own == 10 and decoy == 10 and baseline_decoy == 10
    record_criterion(5, ok, f"MRCP on controlled arm {own}/10, on decoy when given its actions {decoy}/10, "
                            f"Max-motion on the faster decoy {baseline_decoy}/10")
    assert ok


def test_criterion_6_exploration_length(matrix_rows, record_criterion):
    e = {n: _mean(matrix_rows[f"n_actions={n}"]) for n in (25, 50, 100)}
    ok = e[25] >= e[50] >= e[100]
    record_criterion(6, ok, f"mean error 25/50/100 actions = {e[25]:.2f}/{e[50]:.2f}/{e[100]:.2f} px")
    assert ok


def test_criterion_7_outlier_removal(matrix_rows, record_criterion):
    off = _mean(matrix_rows["outlier=off"], "pr_area")
    on = _mean(matrix_rows["outlier=on"], "pr_area")
    record_criterion(7, on > off, f"PR area without/with variance filter = {off:.4f}/{on:.4f} (20 seeds)")
    assert on > off


def test_criterion_8_linear_servo(record_criterion):
    reached = 0
    for i in range(50):
        rng = np.random.default_rng(i)
        J = rng.normal(0.0, 100.0, (3, 4))
        plant = LinearPlant(J, (320.0, 240.0, 50.0))
        goal = np.array([320.0, 240.0, 50.0]) + rng.uniform(-150, 150, 3)
        out = reach(plant, None, Goal(tuple(goal)))
        reached += out.early_terminated and out.steps <= 150
    worst = 0.0
    for i in range(20):
        rng = np.random.default_rng(100 + i)
        J = rng.normal(0.0, 100.0, (3, 4))
        plant = LinearPlant(J)
        est = init_jacobian(plant, 0.02)
        est.J = est.J + rng.normal(0.0, 10.0, est.J.shape)
        for _ in range(200):
            a = rng.uniform(-0.05, 0.05, 4)
            before = plant.observe()
            plant.apply(a)
            est = batched_update(broyden_update(est, a, mrcp_displacement(before, plant.observe())))
        worst = max(worst, float(np.linalg.norm(est.J - J)))
    ok = reached == 50 and worst < 1e-3
    record_criterion(8, ok, f"{reached}/50 linear instances reached 5 px; worst Jacobian error {worst:.2e}")
    assert ok


TOOLS5 = ("none", "wrench", "pliers", "pencil", "marker")


@pytest.mark.parametrize("tool", TOOLS5)
def test_criterion_9_reaching(tool, record_criterion):
    t0 = time.perf_counter()
    errors, reached = [], []
    for seed in range(5):
        summary = reaching_suite(default_session(seed, tool))
        errors += summary.errors_cm
        reached += [o.early_terminated for o in summary.outcomes]
    elapsed = time.perf_counter() - t0
    median, etr = float(np.median(errors)), 100.0 * float(np.mean(reached))
    ok = median <= 3.0 and etr >= 60.0 and elapsed < 120
    record_criterion(9, ok, f"[{tool}] median error {median:.2f} cm, ETR {etr:.0f}%, {elapsed:.0f} s")
    assert ok


def test_criterion_10_following_and_imitation(record_criterion):
    follow, imit, congruent = [], [], True
    for seed in range(5):
        follow.append(follow_c(default_session(seed)).reached_fraction)
        source = default_session(seed)
        target = recognize(translated_config(default_world_config()), seed)
        res = imitation(source, target)
        imit.append(res.reached_fraction)
        achieved = np.array([o.final_position[:2] for o in res.outcomes])
        shape_err = np.linalg.norm((achieved - achieved[0]) - (res.waypoints[:, :2] - res.waypoints[0, :2]), axis=1)
        congruent &= bool(shape_err.max() <= 10.0)
    f, m = min(follow), min(imit)
    ok = f >= 0.8 and m >= 0.8 and congruent
    record_criterion(10, ok, f"C arc waypoints reached (worst seed) {f:.0%}; imitation {m:.0%}; "
                             f"congruent={congruent}")
    assert ok


def _digest(directory: Path) -> dict:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(directory.iterdir())}


def test_criterion_11_determinism(tmp_path, record_criterion):
    runs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert main(["explore", "--seed", "3", "--out", str(out)]) == 0
        assert main(["identify", str(out / "log_3.jsonl"), "--out", str(out)]) == 0
        assert main(["servo", "--log", str(out / "log_3.jsonl"), "--report", str(out / "log_3_report.json"),
                     "--out", str(out)]) == 0
        assert main(["follow", "--seed", "3", "--out", str(out)]) == 0
        runs.append(_digest(out))
    cfg = tmp_path / "bench.json"
    cfg.write_text('{"bench": {"cells": [{"setting": "stages=1", "family": "stages", "stages": 1},'
                   ' {"setting": "outlier=on", "family": "outlier", "outlier": true}]}}')
    bench = []
    for workers in (1, 2):
        out = tmp_path / f"bench{workers}"
        assert main(["bench", "--config", str(cfg), "--seeds", "0", "1", "--workers", str(workers),
                     "--out", str(out)]) == 0
        bench.append(_digest(out))
    ok = runs[0] == runs[1] and bench[0] == bench[1]
    record_criterion(11, ok, f"{len(runs[0])} pipeline files and {len(bench[0])} bench files "
                             f"hash-equal across reruns and worker counts 1/2")
    assert ok
