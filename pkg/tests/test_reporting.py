import json
import math
import os

import pytest

from msflow.cli import simrun, simsweep
from msflow.config import load_config
from msflow.metrics import (REQUEST_HEADER, SUMMARY_KEYS, MetricsReport, RequestRow, emit_report,
                            read_requests, verify_report)
from msflow.topology import ConfigError


def report(rows, colls=()):
    return MetricsReport("fs", 0, rows, list(colls))


def test_all_met_attainment_one(tmp_path):
    s = emit_report(report([RequestRow(0, 0.0, 1.0, 2.0), RequestRow(1, 1.0, 0.5, 2.0)]), tmp_path)
    assert s["slo_attainment"] == 1.0
    assert not verify_report(tmp_path)


def test_empty_run_headers_only(tmp_path):
    s = emit_report(report([]), tmp_path)
    assert s["slo_attainment"] is None
    assert (tmp_path / "requests.csv").read_text() == ",".join(REQUEST_HEADER) + "\n"
    assert list(json.loads((tmp_path / "summary.json").read_text())) == SUMMARY_KEYS


def test_earliness_sign_matches_slo(tmp_path):
    rows = [RequestRow(0, 0.0, 3.0, 2.0), RequestRow(1, 0.0, 2.0, 2.0), RequestRow(2, 0.0, math.inf, 2.0)]
    s = emit_report(report(rows, [(0, 1, 0.0, 0.25)]), tmp_path)
    got = read_requests(tmp_path)
    assert [r["slo_met"] for r in got] == ["0", "1", "0"]
    assert float(got[0]["earliness_s"]) < 0 <= float(got[1]["earliness_s"])
    assert s["slo_attainment"] == pytest.approx(1 / 3) and s["cct_mean_s"] == 0.25
    assert not verify_report(tmp_path)


def test_verifier_catches_tampering(tmp_path):
    emit_report(report([RequestRow(0, 0.0, 1.0, 2.0)]), tmp_path)
    p = tmp_path / "summary.json"
    data = json.loads(p.read_text())
    data["ttft_mean_s"] = 9.0
    p.write_text(json.dumps(data))
    assert any("ttft_mean_s" in m for m in verify_report(tmp_path))


def test_unwritable_path_named(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match=str(blocker)):
        emit_report(report([]), blocker / "sub")


def test_nine_significant_digits(tmp_path):
    emit_report(report([RequestRow(0, 1 / 3, 1 / 7, 5.0)]), tmp_path)
    row = read_requests(tmp_path)[0]
    assert row["arrival_s"] == "0.333333333" and row["ttft_s"] == "0.142857143"


def test_contention_style_attainment(tmp_path):
    # FS replay: A and B meet their request deadlines, C misses
    rows = [RequestRow(1, 0.0, 6.0, 9.0), RequestRow(2, 0.0, 9.0, 12.0), RequestRow(4, 0.0, 8.0, 7.0)]
    assert emit_report(report(rows), tmp_path)["slo_attainment"] == pytest.approx(2 / 3)


def test_config_defaults_and_merge(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("model:\n  layers: 4\n")
    cfg = load_config(p, {"sim": {"seed": 3}})
    assert cfg["model"]["layers"] == 4 and cfg["sim"]["seed"] == 3 and cfg["mfs"]["K"] == 8


@pytest.mark.parametrize("text,key", [
    ("model:\n  layerz: 4\n", "model.layerz"),
    ("bogus:\n  a: 1\n", "bogus"),
    ("model:\n  layers: 0\n", "model.layers"),
    ("inter:\n  drop_budget_frac: 2\n", "inter.drop_budget_frac"),
    ("sim:\n  promotion_tick_ms: abc\n", "sim.promotion_tick_ms"),
    ("model:\n  alpha_ms: -1\n", "model.alpha_ms"),
])
def test_config_errors_name_key(tmp_path, text, key):
    p = tmp_path / "c.yaml"
    p.write_text(text)
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        load_config(p)


def test_missing_config_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/nonexistent/cfg.yaml")


def test_simrun_writes_verifiable_report(tmp_path, repo_root, capsys):
    cfg = os.path.join(repo_root, "configs", "small.yaml")
    assert simrun(["--config", cfg, "--policy", "mfs", "--rate", "3", "--seed", "1",
                   "--out", str(tmp_path)]) == 0
    assert "slo_attainment" in capsys.readouterr().out
    assert not verify_report(tmp_path)


def test_simrun_bad_config_exit_code(tmp_path, capsys):
    p = tmp_path / "c.yaml"
    p.write_text("nope: {}\n")
    assert simrun(["--config", str(p), "--policy", "fs", "--rate", "1", "--out", str(tmp_path)]) == 2
    assert "nope" in capsys.readouterr().err


def test_simsweep_grid(tmp_path, repo_root):
    cfg = os.path.join(repo_root, "configs", "small.yaml")
    assert simsweep(["--config", cfg, "--policies", "fs,sjf", "--rates", "2,4", "--seeds", "0",
                     "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert len(lines) == 5
    assert (tmp_path / "sjf" / "rate_4" / "seed_0" / "summary.json").exists()


def test_simsweep_rejects_unknown_policy(tmp_path):
    with pytest.raises(SystemExit):
        simsweep(["--policies", "fs,lifo", "--rates", "1", "--out", str(tmp_path)])
