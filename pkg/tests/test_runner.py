import textwrap

import pytest

from riptide import runner
from riptide.config import ExecutionConfig
from riptide.project import UnknownTestError, run_tests

SUITE = '''
import os, time
import pytest

def test_ok():
    assert 1

def test_bad():
    assert 0

@pytest.fixture
def broken():
    raise RuntimeError

def test_setup_error(broken):
    pass

@pytest.mark.skip
def test_skipped():
    pass

@pytest.mark.xfail(strict=True)
def test_expected_failure():
    assert 0

def test_slow():
    time.sleep(30)
'''


@pytest.fixture
def project(tmp_path):
    (tmp_path / "tests").mkdir()
    (tmp_path / "tests" / "test_mix.py").write_text(textwrap.dedent(SUITE), encoding="utf-8")
    return tmp_path


@pytest.mark.parametrize("backend", ["spawn", "fork"])
def test_outcomes_per_test(project, backend):
    cfg = ExecutionConfig(timeout=1.5, plugin_autoload=False, runner=backend)
    before = runner.executions()
    rep = runner.execute(project, None, cfg)
    assert runner.executions() == before + 1
    assert rep.complete
    got = {t.split("::")[1]: r.outcome for t, r in rep.results.items()}
    assert got == {"test_ok": "pass", "test_bad": "fail", "test_setup_error": "error", "test_skipped": "skip",
                   "test_expected_failure": "skip", "test_slow": "timeout"}


@pytest.mark.parametrize("backend", ["spawn", "fork"])
def test_crashing_process_is_incomplete(tmp_path, backend):
    (tmp_path / "test_crash.py").write_text("import os\n\ndef test_crash():\n    os._exit(9)\n", encoding="utf-8")
    rep = runner.execute(tmp_path, ["test_crash.py::test_crash"], ExecutionConfig(runner=backend))
    assert not rep.complete
    assert rep.outcome("test_crash.py::test_crash") == "error"
    assert "status 9" in rep.diagnostic


def test_selected_ids_only(project):
    cfg = ExecutionConfig(plugin_autoload=False, runner="fork")
    rep = run_tests(project, ["tests/test_mix.py::test_ok"], cfg)
    assert list(rep.results) == ["tests/test_mix.py::test_ok"]


def test_unknown_test_id_is_rejected(project):
    with pytest.raises(UnknownTestError):
        run_tests(project, ["tests/test_mix.py::test_nope"])


def test_fork_runs_are_isolated(tmp_path):
    (tmp_path / "mod.py").write_text("COUNT = []\n", encoding="utf-8")
    (tmp_path / "test_state.py").write_text(
        "import mod\n\ndef test_fresh():\n    mod.COUNT.append(1)\n    assert mod.COUNT == [1]\n", encoding="utf-8")
    cfg = ExecutionConfig(runner="fork", plugin_autoload=False)
    for _ in range(3):
        assert runner.execute(tmp_path, None, cfg).passing() == {"test_state.py::test_fresh"}


def test_report_round_trip(project, tmp_path):
    rep = runner.execute(project, ["tests/test_mix.py::test_ok"], ExecutionConfig(runner="fork"))
    rep.save(tmp_path / "r.jsonl")
    assert runner.TestRunReport.load(tmp_path / "r.jsonl").results == rep.results
