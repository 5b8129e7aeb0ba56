import csv
import json
import subprocess
import sys

import pytest

from chargeplan.cli import build_parser, main, resolve_settings

REQUEST = "Charge my EV while minimizing the electricity cost"


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_schedule_example(capsys):
    code, out, _ = _run(capsys, "schedule", REQUEST, "--backend", "mock", "--env",
                        "fixtures/normalized.json")
    assert code == 0
    rec = json.loads(out)
    assert rec["op_class"] == "LP" and rec["status"] == "optimal"
    assert len(rec["schedule"]) == 8 and "raw_response" in rec and rec["op"]["provenance"]


def test_schedule_files(tmp_path, capsys):
    out_dir = tmp_path / "run"
    code, out, _ = _run(capsys, "--env", "physical.json", "schedule",
                        "Charge to 90% by tomorrow at 7 a.m. at the lowest price",
                        "--out", str(out_dir), "--csv", str(tmp_path / "s.csv"), "--assist")
    assert code == 0 and out == ""
    rec = json.loads((out_dir / "run_record.json").read_text())
    assert rec["op_class"] == "LP" and rec["op"]["grid"]["delta_t"] == 0.5
    with open(tmp_path / "s.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == rec["op"]["grid"]["num_slots"]
    assert list(rows[0]) == ["slot", "cc", "ct", "pp", "baseline"]


def test_gen_corpus_is_reproducible(capsys):
    a = _run(capsys, "gen-corpus", "--per-metric", "2", "--seed", "7")
    b = _run(capsys, "gen-corpus", "--per-metric", "2", "--seed", "7")
    assert a[0] == b[0] == 0 and a[1] == b[1]
    assert len(a[1].splitlines()) == 10


def test_evaluate_needs_corpus(capsys):
    code, out, err = _run(capsys, "evaluate")
    assert code == 2 and out == "" and "--corpus" in err


def test_usage_errors(capsys, tmp_path):
    assert _run(capsys, "classify", "hi", "--classes", "LP,XX")[0] == 2
    assert _run(capsys, "schedule", "hi", "--env", str(tmp_path / "none.json"))[0] == 2
    assert _run(capsys, "mixture", "--pi", "abc")[0] == 2
    assert _run(capsys, "gen-corpus", "--per-metric", "0")[0] == 2
    assert _run(capsys, "evaluate", "--corpus", str(tmp_path / "missing.jsonl"))[0] == 2
    assert _run(capsys, "classify", "hi", "--scenario", "nope")[0] == 2
    assert _run(capsys, "--help")[0] == 0


def test_stage_failure_exit(capsys):
    code, out, err = _run(capsys, "schedule", "charge cheaply within 100 hours")
    assert code == 1 and out == "" and "[parse]" in err


def test_classify_and_flag_position(capsys):
    code, out, _ = _run(capsys, "--classes", "MM,QP", "classify", "keep it smooth")
    assert code == 0 and json.loads(out)["op_class"] == "QP"
    code, out, _ = _run(capsys, "classify", "keep it smooth", "--classes", "LP,MM")
    assert json.loads(out)["op_class"] == "LP"


def test_evaluate_and_arol(tmp_path, capsys):
    corpus = tmp_path / "c.jsonl"
    assert _run(capsys, "gen-corpus", "--per-metric", "4", "--out", str(tmp_path))[0] == 0
    (tmp_path / "corpus.jsonl").rename(corpus)
    rep = tmp_path / "rep"
    code, _, _ = _run(capsys, "evaluate", "--corpus", str(corpus), "--scenarios",
                      "basic,error-informed", "--arol-samples", "3", "--out", str(rep))
    assert code == 0
    data = json.loads((rep / "report.json").read_text())
    assert [r["scenario"] for r in data["ira"]] == ["basic", "error-informed"]
    assert (rep / "arol_by_scenario.csv").read_text().count("\n") == 1 + 2 * 5
    code, out, _ = _run(capsys, "arol", "--confusion", str(rep / "report.json"), "--samples",
                        "3", "--workers", "2")
    assert code == 0
    assert {r["metric"] for r in json.loads(out)["arol_by_scenario"]} == {
        "CC", "CT", "PP", "PV", "GD"}


def test_mixture_command(capsys):
    code, out, _ = _run(capsys, "mixture", "--pi", "0", "1/3", "0.5", "1", "--per-metric", "6",
                        "--candidate-sets", "LP,LMT,MM", "LP,QP", "--draws", "50")
    assert code == 0
    rows = json.loads(out)["mixture"]
    assert len(rows) == 8
    assert all(r["expected_ira"] == r["direct_ira"] for r in rows)


def test_precedence(tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": "from-file", "base_url": "http://file", "seed": 3,
                               "scenario": "basic"}))
    parser = build_parser()
    monkeypatch.delenv("LLM_MODEL", raising=False)
    monkeypatch.setenv("LLM_BASE_URL", "http://env")
    st = resolve_settings(parser.parse_args(["--config", str(cfg), "classify", "x"]))
    assert st["model"] == "from-file" and st["base_url"] == "http://env"
    assert st["seed"] == 3 and st["scenario"] == "basic" and st["backend"] == "mock"
    st = resolve_settings(parser.parse_args(["--config", str(cfg), "classify", "x",
                                             "--base-url", "http://flag", "--seed", "0"]))
    assert st["base_url"] == "http://flag" and st["seed"] == 0
    monkeypatch.setenv("CHARGEPLAN_CONFIG", str(cfg))
    st = resolve_settings(parser.parse_args(["classify", "x"]))
    assert st["model"] == "from-file"


def test_bad_config_file(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"colour": "blue"}')
    assert _run(capsys, "--config", str(cfg), "classify", "x")[0] == 2


def test_console_script():
    proc = subprocess.run([sys.executable, "-m", "chargeplan.cli", "classify", REQUEST],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and json.loads(proc.stdout)["op_class"] == "LP"
