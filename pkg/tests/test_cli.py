import csv
import json
import xml.etree.ElementTree as ET

import jsonschema
import numpy as np
import pytest

from selfservo import schemas
from selfservo.cli import main
from selfservo.evaluation import mrcp_error
from selfservo.experiments import recognize
from selfservo.selfrec import ResponsivenessReport, SelfRecConfig
from selfservo.servo import mrcp_of, read_trace
from selfservo.sim import ExplorationLog, default_world_config


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def _json(path):
    return json.loads(path.read_text())


def _validate_log(path):
    lines = [json.loads(l) for l in path.read_text().splitlines()]
    jsonschema.validate(lines[0], schemas.LOG_HEADER)
    for rec in lines[1:]:
        jsonschema.validate(rec, schemas.LOG_STEP)
    return lines


@pytest.fixture(scope="module")
def noiseless_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("noiseless")
    cfg = _write(out / "cfg.json", {"world": {"noise": "none"}})
    assert main(["explore", "--config", cfg, "--seed", "0", "--out", str(out)]) == 0
    assert main(["identify", str(out / "log_0.jsonl"), "--config", cfg, "--out", str(out)]) == 0
    return out, cfg


class TestExplore:
    def test_default_log(self, tmp_path):
        assert main(["explore", "--out", str(tmp_path)]) == 0
        lines = _validate_log(tmp_path / "log_0.jsonl")
        assert lines[0]["n_actions"] == 100 and len(lines) == 102

    def test_byte_identical(self, tmp_path):
        for tag in "ab":
            assert main(["explore", "--seed", "4", "--out", str(tmp_path / tag)]) == 0
        assert (tmp_path / "a" / "log_4.jsonl").read_bytes() == (tmp_path / "b" / "log_4.jsonl").read_bytes()

    def test_n_actions(self, tmp_path):
        assert main(["explore", "--n-actions", "25", "--out", str(tmp_path)]) == 0
        assert ExplorationLog.from_jsonl(tmp_path / "log_0.jsonl").n_actions == 25

    def test_multiple_seeds(self, tmp_path):
        assert main(["explore", "--seeds", "1", "2", "--n-actions", "5", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "log_1.jsonl").exists() and (tmp_path / "log_2.jsonl").exists()


class TestIdentify:
    def test_outputs_and_schema(self, noiseless_run):
        out, _ = noiseless_run
        jsonschema.validate(_json(out / "log_0_report.json"), schemas.REPORT)
        ET.parse(out / "log_0_identify.svg")

    def test_noiseless_mrcp_within_one_px(self, noiseless_run):
        out, _ = noiseless_run
        log = ExplorationLog.from_jsonl(out / "log_0.jsonl")
        report = ResponsivenessReport.from_json(out / "log_0_report.json")
        assert mrcp_error(log, report).px <= 1.0

    def test_noiseless_mrcp_on_last_link(self, noiseless_run):
        out, _ = noiseless_run
        report = ResponsivenessReport.from_json(out / "log_0_report.json")
        assert all(b.arm == 0 and b.link == 3 for b in report.member_bindings)

    def test_decoy_follows_action_arm(self, tmp_path):
        cfg = _write(tmp_path / "cfg.json", {"world": {"decoy": True}})
        assert main(["explore", "--config", cfg, "--out", str(tmp_path)]) == 0
        log_path = tmp_path / "log_0.jsonl"
        log = ExplorationLog.from_jsonl(log_path)
        for arm in (0, 1):
            out = tmp_path / f"arm{arm}"
            assert main(["identify", str(log_path), "--action-arm", str(arm), "--out", str(out)]) == 0
            report = ResponsivenessReport.from_json(out / "log_0_report.json")
            assert mrcp_error(log, report, arm=arm).on_arm == arm


class TestServo:
    def test_reaching_suite_summary(self, noiseless_run):
        out, cfg = noiseless_run
        dest = out / "servo"
        assert main(["servo", "--config", cfg, "--log", str(out / "log_0.jsonl"),
                     "--report", str(out / "log_0_report.json"), "--out", str(dest)]) == 0
        summary = _json(dest / "servo_summary.json")
        jsonschema.validate(summary, schemas.SERVO_SUMMARY)
        assert len(summary["per_seed"][0]["outcomes"]) == 9
        for rec in read_trace(dest / "servo_trace.jsonl"):
            jsonschema.validate(rec, schemas.TRACE_RECORD)

    def test_single_goal(self, noiseless_run, tmp_path):
        out, cfg = noiseless_run
        assert main(["servo", "--config", cfg, "--log", str(out / "log_0.jsonl"),
                     "--report", str(out / "log_0_report.json"), "--goal", "330", "200", "--out",
                     str(tmp_path)]) == 0
        summary = _json(tmp_path / "servo_summary.json")
        assert len(summary["per_seed"][0]["outcomes"]) == 1
        assert summary["median_error_cm"] is None  # depth left free

    def test_waypoint_at_current_mrcp(self, tmp_path):
        cfg = _write(tmp_path / "cfg.json", {"world": {"noise": "none"}})
        session = recognize(default_world_config("none"), 0, selfrec=SelfRecConfig(seed=0))
        session.reset_arm()
        here = mrcp_of(session.plant(stream=1000).observe())
        wp = _write(tmp_path / "wp.json", [here.tolist()])
        assert main(["follow", "--config", cfg, "--waypoints", wp, "--out", str(tmp_path)]) == 0
        summary = _json(tmp_path / "follow_summary.json")
        jsonschema.validate(summary, schemas.PATH_SUMMARY)
        assert summary["reached_fraction"] == 1.0
        assert summary["per_seed"][0]["outcomes"][0]["steps"] == 0

    def test_follow_and_imitate(self, tmp_path):
        assert main(["follow", "--seed", "1", "--out", str(tmp_path)]) == 0
        follow = _json(tmp_path / "follow_summary.json")
        jsonschema.validate(follow, schemas.PATH_SUMMARY)
        assert main(["imitate", "--seed", "1", "--source", str(tmp_path / "follow_summary.json"),
                     "--out", str(tmp_path)]) == 0
        imit = _json(tmp_path / "imitate_summary.json")
        jsonschema.validate(imit, schemas.PATH_SUMMARY)
        for rec in read_trace(tmp_path / "imitate_trace.jsonl"):
            jsonschema.validate(rec, schemas.TRACE_RECORD)
        src = np.array([p[:2] for p in follow["per_seed"][0]["path"] if p is not None])
        wps = np.array([w[:2] for w in imit["per_seed"][0]["waypoints"]])
        # Congruent: the waypoints are the source path translated.
        np.testing.assert_allclose(wps - wps[0], src - src[0], atol=1e-9)
        assert imit["reached_fraction"] >= 0.8


class TestBench:
    def test_outputs_and_partial_failure(self, tmp_path):
        cfg = _write(tmp_path / "cfg.json", {"bench": {"cells": [
            {"setting": "stages=1", "family": "stages", "stages": 1, "n_actions": 40},
            {"setting": "broken", "family": "top_k", "top_k": 100000, "n_actions": 40}]}})
        out = tmp_path / "bench"
        assert main(["bench", "--config", cfg, "--seeds", "0", "1", "--out", str(out)]) == 0
        with open(out / "bench.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0])[:5] == ["setting", "seed", "error_px", "error_cm", "success"]
        assert len(rows) == 4
        assert all(r["status"] == "ok" for r in rows if r["setting"] == "stages=1")
        assert all(r["status"].startswith("error") for r in rows if r["setting"] == "broken")
        summary = _json(out / "bench_summary.json")
        jsonschema.validate(summary, schemas.BENCH_SUMMARY)
        assert summary["summary"]["broken"]["failures"] == 2
        jsonschema.validate(_json(out / "pr_curves.json"), schemas.PR_CURVES)
        for svg in out.glob("*.svg"):
            ET.parse(svg)
        assert (out / "bench_stages.svg").exists()

    def test_bad_matrix(self, tmp_path):
        cfg = _write(tmp_path / "cfg.json", {"bench": {"cells": [{"setting": "x", "bogus": 1}]}})
        assert main(["bench", "--config", cfg, "--out", str(tmp_path)]) == 1

    def test_bad_workers(self, tmp_path):
        assert main(["bench", "--workers", "0", "--out", str(tmp_path)]) == 1


class TestPlot:
    def test_plot_existing_outputs(self, noiseless_run, tmp_path):
        out, cfg = noiseless_run
        assert main(["follow", "--config", cfg, "--log", str(out / "log_0.jsonl"), "--report",
                     str(out / "log_0_report.json"), "--n-waypoints", "4", "--out", str(tmp_path)]) == 0
        assert main(["plot", "--log", str(out / "log_0.jsonl"), "--report", str(out / "log_0_report.json"),
                     "--trace", str(tmp_path / "follow_trace.jsonl"), "--out", str(tmp_path / "figs")]) == 0
        svgs = sorted((tmp_path / "figs").glob("*.svg"))
        assert len(svgs) == 2
        for svg in svgs:
            assert ET.parse(svg).getroot().tag.endswith("svg")

    def test_nothing_to_plot(self, tmp_path):
        assert main(["plot", "--out", str(tmp_path)]) == 1


class TestConfigAndFlags:
    def test_flags_override_config(self, tmp_path):
        cfg = _write(tmp_path / "cfg.json", {"seeds": [5], "n_actions": 30, "selfrec": {"noise_variance": 0.4}})
        assert main(["explore", "--config", cfg, "--seed", "7", "--n-actions", "20", "--out", str(tmp_path)]) == 0
        assert not (tmp_path / "log_5.jsonl").exists()
        assert ExplorationLog.from_jsonl(tmp_path / "log_7.jsonl").n_actions == 20
        assert main(["identify", str(tmp_path / "log_7.jsonl"), "--config", cfg, "--noise-variance", "0.8",
                     "--top-k", "5", "--stages", "1", "--out", str(tmp_path)]) == 0
        report = _json(tmp_path / "log_7_report.json")
        assert report["config"]["noise_variance"] == 0.8
        assert report["config"]["top_k"] == 5 and report["stage"] == 1
        assert report["seed"] == 7

    def test_config_values_apply(self, tmp_path):
        cfg = _write(tmp_path / "cfg.json", {"seeds": [5], "n_actions": 30})
        jsonschema.validate(_json(tmp_path / "cfg.json"), schemas.RUN_CONFIG)
        assert main(["explore", "--config", cfg, "--out", str(tmp_path)]) == 0
        assert ExplorationLog.from_jsonl(tmp_path / "log_5.jsonl").n_actions == 30


class TestExitCodes:
    @pytest.mark.parametrize("argv", [[], ["nope"], ["explore", "--bogus"], ["identify"],
                                      ["explore", "--stages", "3"], ["explore", "--n-actions", "x"]])
    def test_usage_errors(self, argv):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 1

    def test_help(self):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0

    def test_bad_config_key(self, tmp_path):
        cfg = _write(tmp_path / "cfg.json", {"nonsense": 1})
        assert main(["explore", "--config", cfg, "--out", str(tmp_path)]) == 1

    def test_bad_config_value(self, tmp_path):
        cfg = _write(tmp_path / "cfg.json", {"selfrec": {"top_k": 0}})
        assert main(["explore", "--config", cfg, "--out", str(tmp_path)]) == 1

    def test_unknown_preset(self, tmp_path):
        cfg = _write(tmp_path / "cfg.json", {"world": {"noise": "loud"}})
        assert main(["explore", "--config", cfg, "--out", str(tmp_path)]) == 1

    def test_zero_actions(self, tmp_path):
        assert main(["explore", "--n-actions", "0", "--out", str(tmp_path)]) == 1

    def test_missing_config(self, tmp_path):
        assert main(["explore", "--config", str(tmp_path / "absent.json"), "--out", str(tmp_path)]) == 2

    def test_missing_log(self, tmp_path):
        assert main(["identify", str(tmp_path / "absent.jsonl"), "--out", str(tmp_path)]) == 2

    def test_malformed_log(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("{not json\n")
        assert main(["identify", str(bad), "--out", str(tmp_path)]) == 2

    def test_malformed_report(self, noiseless_run, tmp_path):
        out, _ = noiseless_run
        bad = tmp_path / "r.json"
        bad.write_text("[]")
        assert main(["servo", "--log", str(out / "log_0.jsonl"), "--report", str(bad), "--out", str(tmp_path)]) == 2

    def test_output_is_a_file(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["explore", "--n-actions", "3", "--out", str(blocker)]) == 2

    def test_empty_waypoints(self, tmp_path):
        wp = _write(tmp_path / "wp.json", [])
        assert main(["follow", "--waypoints", wp, "--n-actions", "30", "--out", str(tmp_path)]) == 1
