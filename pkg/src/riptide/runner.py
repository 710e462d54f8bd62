"""Run subject tests in isolated child processes and collect outcomes."""
from __future__ import annotations

import atexit
import json
import logging
import os
import shutil
import signal
import subprocess
import sys
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import riptide
from riptide.config import ExecutionConfig
from riptide.store import iter_jsonl, write_jsonl

log = logging.getLogger(__name__)

OUTCOMES = ("pass", "fail", "error", "timeout", "skip")
FAILING = frozenset({"fail", "error", "timeout"})
_HARD_TIMEOUT_SLACK = 60.0
_executions = 0


def executions() -> int:
    """Number of test processes started so far in this interpreter."""
    return _executions


@dataclass(frozen=True)
class TestResult:
    __test__ = False  # not a pytest test class

    test_id: str
    outcome: str
    duration_ms: float = 0.0


@dataclass
class TestRunReport:
    __test__ = False  # not a pytest test class

    results: dict[str, TestResult] = field(default_factory=dict)
    complete: bool = True
    diagnostic: str = ""

    def outcome(self, test_id: str) -> str | None:
        r = self.results.get(test_id)
        return r.outcome if r else None

    def failing(self) -> set[str]:
        return {t for t, r in self.results.items() if r.outcome in FAILING}

    def passing(self) -> set[str]:
        return {t for t, r in self.results.items() if r.outcome == "pass"}

    def to_records(self) -> list[dict]:
        return [
            {"test_id": r.test_id, "outcome": r.outcome, "duration_ms": r.duration_ms}
            for r in sorted(self.results.values(), key=lambda r: r.test_id)
        ]

    def save(self, path: Path) -> None:
        write_jsonl(path, self.to_records())

    @classmethod
    def load(cls, path: Path) -> "TestRunReport":
        rep = cls()
        for rec in iter_jsonl(path):
            rep.results[rec["test_id"]] = TestResult(rec["test_id"], rec["outcome"], rec["duration_ms"])
        return rep


def python_path(project_root: Path, extra: Iterable[str] = ()) -> str:
    root = Path(project_root)
    parts = [str(root)]
    if (root / "src").is_dir():
        parts.append(str(root / "src"))
    parts.extend(extra)
    inherited = os.environ.get("PYTHONPATH")
    if inherited:
        parts.append(inherited)
    parts.append(str(Path(riptide.__file__).resolve().parent.parent))
    return os.pathsep.join(parts)


def _command(config: ExecutionConfig) -> list[str]:
    base = list(config.test_command) or [sys.executable, "-m", "pytest"]
    if base[0] in ("python", "python3"):
        base[0] = sys.executable
    return base + ["-p", "riptide.pytest_plugin", "-p", "no:cacheprovider", "-q", "--no-header"]


def execute(
    project_root: Path,
    test_ids: Iterable[str] | None,
    config: ExecutionConfig,
    *,
    env: dict[str, str] | None = None,
) -> TestRunReport:
    """Run *test_ids* (``None`` = whole suite) once in a fresh process.

    Tests absent from the plugin output are reported as ``error``; a killed or
    crashed process marks the report incomplete.
    """
    global _executions
    root = Path(project_root).resolve()
    ids = None if test_ids is None else sorted(set(test_ids))
    if ids is not None and not ids:
        return TestRunReport()
    with tempfile.TemporaryDirectory(prefix="riptide-run-") as tmp:
        report_path = Path(tmp) / "outcomes.jsonl"
        child_env = dict(os.environ)
        child_env.update(env or {})
        child_env.update(
            {
                "PYTHONDONTWRITEBYTECODE": "1",
                "PYTHONHASHSEED": child_env.get("PYTHONHASHSEED", "0"),
                "PYTHONPATH": python_path(root),
                "RIPTIDE_REPORT": str(report_path),
                "RIPTIDE_TIMEOUT": str(config.timeout),
            }
        )
        if not config.plugin_autoload:
            child_env["PYTEST_DISABLE_PLUGIN_AUTOLOAD"] = "1"
        argv = _command(config) + ["--rootdir", str(root)] + (ids or [])
        n = len(ids) if ids else 1
        hard_limit = config.timeout * max(n, 1) + _HARD_TIMEOUT_SLACK
        rep = TestRunReport()
        _executions += 1
        output = Path(tmp) / "output.txt"
        server = _fork_server() if config.runner == "fork" and not config.test_command else None
        code = _UNSET
        if server is not None:
            code = server.run(root, argv[3:], child_env, output, hard_limit)
        if code is _UNSET:
            code = _spawn(argv, root, child_env, output, hard_limit)
        if code is None:
            rep.complete = False
            rep.diagnostic = f"test process exceeded {hard_limit:.0f}s and was killed"
        tail = output.read_text(encoding="utf-8", errors="replace")[-4000:] if output.exists() else ""
        collect_errors = []
        if report_path.exists():
            for rec in iter_jsonl(report_path):
                if "collect_error" in rec:
                    collect_errors.append(rec)
                    continue
                rep.results[rec["test_id"]] = TestResult(rec["test_id"], rec["outcome"], rec["duration_ms"])
        if code is not None and code not in (0, 1, 5):
            rep.complete = False
            rep.diagnostic = f"test runner exited with status {code}\n{tail}"
        if collect_errors:
            rep.diagnostic = (rep.diagnostic + "\n" if rep.diagnostic else "") + "collection errors: " + ", ".join(
                e["collect_error"] for e in collect_errors
            )
        if ids is not None:
            for t in ids:
                if t not in rep.results:
                    missing = "timeout" if code is None else "error"
                    rep.results[t] = TestResult(t, missing, 0.0)
        return rep


_UNSET = object()


def _spawn(argv, root, env, output: Path, limit: float) -> int | None:
    with open(output, "w", encoding="utf-8", errors="replace") as out:
        proc = subprocess.Popen(
            argv, cwd=root, env=env, stdout=out, stderr=subprocess.STDOUT,
            stdin=subprocess.DEVNULL, start_new_session=True,
        )
        try:
            return proc.wait(timeout=limit)
        except subprocess.TimeoutExpired:
            _kill(proc)
            return None


class ForkServer:
    """Client side of :mod:`riptide.forkserver`; one request at a time."""

    def __init__(self):
        env = dict(os.environ)
        env.update({"PYTHONHASHSEED": "0", "PYTHONDONTWRITEBYTECODE": "1",
                    "PYTHONPATH": str(Path(riptide.__file__).resolve().parent.parent)})
        self._cwd = tempfile.mkdtemp(prefix="riptide-fork-")
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "riptide.forkserver"], cwd=self._cwd, env=env,
            stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1,
        )

    def run(self, root: Path, args: list[str], env: dict, output: Path, limit: float):
        """Exit status, ``None`` if killed, or ``_UNSET`` if the server is gone."""
        req = {"cwd": str(root), "args": args, "env": env, "output": str(output), "limit": limit}
        try:
            self.proc.stdin.write(json.dumps(req) + "\n")
            self.proc.stdin.flush()
            line = self.proc.stdout.readline()
        except (BrokenPipeError, OSError):
            line = ""
        if not line:
            log.warning("fork server died; falling back to spawning")
            self.close()
            return _UNSET
        return json.loads(line)["code"]

    def alive(self) -> bool:
        return self.proc.poll() is None

    def close(self) -> None:
        if self.proc.poll() is None:
            self.proc.stdin.close()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()
        shutil.rmtree(self._cwd, ignore_errors=True)


_servers = threading.local()
_all_servers: list[ForkServer] = []


def _fork_server() -> ForkServer | None:
    if not hasattr(os, "fork"):
        return None
    srv = getattr(_servers, "server", None)
    if srv is None or not srv.alive():
        srv = ForkServer()
        _servers.server = srv
        _all_servers.append(srv)
    return srv


@atexit.register
def _close_servers() -> None:
    for srv in _all_servers:
        srv.close()


def _kill(proc: subprocess.Popen) -> None:
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except ProcessLookupError:
        pass
    proc.wait()
