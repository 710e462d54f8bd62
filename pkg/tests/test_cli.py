import json
import subprocess
import sys

import pytest

from conftest import EMPTY_TRUE, EQUALS_TRUE, INCREMENT
from riptide import runner
from riptide.cli import main
from riptide.store import read_json, read_jsonl


@pytest.fixture
def vs(fixture_project):
    return fixture_project("versioned_set")


def run(*argv):
    return main([*argv])


def campaign_dir(root):
    (d,) = (root / ".riptide").iterdir()
    return d


def test_usage_errors_exit_1(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["explode"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["diagnose", "--stage", "sideways"])
    assert exc.value.code == 1
    assert run("discover", str(tmp_path / "missing")) == 1
    (tmp_path / "riptide.cfg").write_text("[riptide]\nruns = zero\n")
    assert run("discover", str(tmp_path)) == 1
    assert "error" in capsys.readouterr().err


def test_out_of_order_commands_exit_1(vs, capsys):
    assert run("diagnose", str(vs)) == 1
    assert "riptide discover" in capsys.readouterr().err
    assert run("discover", str(vs), "--runs", "2") == 0
    assert run("report", str(vs), "--runs", "2") == 1
    assert "riptide diagnose" in capsys.readouterr().err
    assert run("diagnose", str(vs), "--runs", "2", "--only", "nope") == 1


def test_red_suite_aborts_with_exit_2(vs, capsys):
    test = vs / "tests" / "test_versioned_set.py"
    test.write_text(test.read_text().replace("== 1", "== 2"))
    assert run("discover", str(vs)) == 2
    err = capsys.readouterr().err
    assert "red" in err and "test_add" in err
    assert not list(vs.rglob("done.json"))


def test_discover_cache_hit_runs_nothing(vs, capsys):
    assert run("discover", str(vs), "--runs", "2") == 0
    first = capsys.readouterr().out
    assert "7 transformations, 4 undetected" in first
    before = runner.executions()
    assert run("discover", str(vs), "--runs", "2") == 0
    assert runner.executions() == before
    assert "cache hit" in capsys.readouterr().out
    # a source change invalidates the cache
    (vs / "versioned_set.py").write_text((vs / "versioned_set.py").read_text() + "\n# touched\n")
    assert run("discover", str(vs), "--runs", "2") == 0
    assert runner.executions() > before


def test_diagnose_is_resumable(vs, capsys):
    assert run("discover", str(vs), "--runs", "2") == 0
    assert run("diagnose", str(vs), "--runs", "2", "--only", EQUALS_TRUE) == 0
    d = campaign_dir(vs)
    assert [r["transformation_id"] for r in read_jsonl(d / "diagnoses.jsonl")] == [EQUALS_TRUE]
    record = (d / "diagnose").glob("*.json")
    stamp = {p.name: p.stat().st_mtime_ns for p in record}
    assert run("diagnose", str(vs), "--runs", "2") == 0
    assert len(read_jsonl(d / "diagnoses.jsonl")) == 4
    for name, mtime in stamp.items():
        assert (d / "diagnose" / name).stat().st_mtime_ns == mtime
    before = runner.executions()
    assert run("diagnose", str(vs), "--runs", "2") == 0
    assert runner.executions() == before
    out = capsys.readouterr().out
    assert "wo            " + INCREMENT in out


def test_infection_stage_then_propagation(vs):
    assert run("discover", str(vs), "--runs", "2") == 0
    assert run("diagnose", str(vs), "--runs", "2", "--stage", "infection") == 0
    d = campaign_dir(vs)
    stages = {r["transformation_id"]: r["stage"] for r in map(read_json, (d / "diagnose").glob("*.json"))}
    assert stages[INCREMENT] == stages[EMPTY_TRUE] == "infection"
    assert stages[EQUALS_TRUE] == "final"
    assert not [p for p in (d / "evidence").rglob("stage2*")]
    assert len(read_jsonl(d / "diagnoses.jsonl")) == 2
    assert run("diagnose", str(vs), "--runs", "2", "--stage", "propagation") == 0
    finals = {r["transformation_id"]: r["symptom"] for r in read_jsonl(d / "diagnoses.jsonl")}
    assert finals[INCREMENT] == "weak-oracle" and finals[EMPTY_TRUE] == "no-propagation"


def test_full_pipeline_through_the_module_entry_point(vs):
    for cmd in ("discover", "diagnose", "report"):
        proc = subprocess.run([sys.executable, "-m", "riptide", cmd, str(vs), "--runs", "2"],
                              capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
    assert "report:" in proc.stdout
    d = campaign_dir(vs)
    summary = json.loads((d / "report" / "summary.json").read_text())
    assert summary["undetected"] == 4
    first = {p.name: p.read_bytes() for p in (d / "report").iterdir()}
    assert run("report", str(vs), "--runs", "2") == 0
    assert {p.name: p.read_bytes() for p in (d / "report").iterdir()} == first


def test_out_directory_outside_the_project(vs, tmp_path):
    out = tmp_path / "elsewhere"
    assert run("discover", str(vs), "--runs", "1", "--out", str(out)) == 0
    assert not (vs / ".riptide").exists()
    assert any(out.rglob("done.json"))
