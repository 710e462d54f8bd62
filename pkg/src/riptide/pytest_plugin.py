"""pytest plugin loaded (``-p riptide.pytest_plugin``) into subject test runs.

Controlled through environment variables so that the subject command line
stays untouched:

``RIPTIDE_REPORT``   append one JSON line per finished test
``RIPTIDE_TIMEOUT``  per-test timeout in seconds (SIGALRM based)
``RIPTIDE_TRACE``    write coverage / stack-distance / return-kind records
``RIPTIDE_METHODS``  JSON index of subject methods, required with the trace
``RIPTIDE_OBS_LOG``  observation log consumed by :mod:`riptide.runtime`
"""
from __future__ import annotations

import dis
import json
import os
import signal
import sys
import threading
import time

import pytest

_RETURN_VALUE = dis.opmap["RETURN_VALUE"]


class TestTimeout(BaseException):
    """Raised inside a test that exceeded its time budget."""


class _State:
    def __init__(self) -> None:
        self.report_path = os.environ.get("RIPTIDE_REPORT")
        self.timeout = float(os.environ.get("RIPTIDE_TIMEOUT", "0") or 0)
        self.trace_path = os.environ.get("RIPTIDE_TRACE")
        self.observing = bool(os.environ.get("RIPTIDE_OBS_LOG"))
        self.timed_out: set[str] = set()
        self.phases: dict[str, dict[str, str]] = {}
        self.started: dict[str, float] = {}
        self.tracer: _Tracer | None = None
        if self.trace_path:
            with open(os.environ["RIPTIDE_METHODS"], encoding="utf-8") as fh:
                self.tracer = _Tracer(json.load(fh))

    def write(self, record: dict) -> None:
        if self.report_path:
            with open(self.report_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record) + "\n")


_state: _State | None = None


def pytest_configure(config):
    global _state
    _state = _State()
    rt = sys.modules.get("riptide.runtime")
    if rt is not None:  # imported before this session started (forked runner)
        rt.configure()


def _alarm(signum, frame):
    raise TestTimeout("per-test timeout exceeded")


@pytest.hookimpl(wrapper=True)
def pytest_runtest_protocol(item, nextitem):
    st = _state
    nodeid = item.nodeid
    st.started[nodeid] = time.perf_counter()
    st.phases[nodeid] = {}
    armed = st.timeout > 0 and threading.current_thread() is threading.main_thread()
    if armed:
        signal.signal(signal.SIGALRM, _alarm)
        signal.setitimer(signal.ITIMER_REAL, st.timeout)
    if st.observing:
        from riptide import runtime

        runtime.begin_test(nodeid)
    if st.tracer is not None:
        st.tracer.begin(nodeid, _test_code(item))
    try:
        return (yield)
    finally:
        if armed:
            signal.setitimer(signal.ITIMER_REAL, 0)
        if st.tracer is not None:
            st.tracer.end(st.trace_path)
        if st.observing:
            from riptide import runtime

            runtime.end_test()
        _finish(st, nodeid)


def _test_code(item):
    fn = getattr(item, "obj", None)
    fn = getattr(fn, "__func__", fn)
    return getattr(fn, "__code__", None)


def pytest_runtest_logreport(report):
    st = _state
    phases = st.phases.setdefault(report.nodeid, {})
    outcome = report.outcome
    if outcome == "failed" and report.longrepr is not None and "TestTimeout" in str(report.longrepr):
        st.timed_out.add(report.nodeid)
    if hasattr(report, "wasxfail"):
        outcome = "skipped" if outcome == "skipped" else "failed"
    phases[report.when] = outcome


def _finish(st: _State, nodeid: str) -> None:
    phases = st.phases.pop(nodeid, {})
    if nodeid in st.timed_out:
        outcome = "timeout"
    elif phases.get("setup") == "failed" or phases.get("teardown") == "failed":
        outcome = "error"
    elif phases.get("call") == "failed":
        outcome = "fail"
    elif "skipped" in phases.values():
        outcome = "skip"
    elif phases.get("call") == "passed":
        outcome = "pass"
    else:
        outcome = "error"
    ms = (time.perf_counter() - st.started.pop(nodeid, time.perf_counter())) * 1000.0
    st.write({"test_id": nodeid, "outcome": outcome, "duration_ms": round(ms, 3)})


def pytest_collectreport(report):
    if report.failed:
        _state.write({"collect_error": report.nodeid, "detail": str(report.longrepr)[-2000:]})


class _Tracer:
    """Profile hook recording which subject methods a test enters.

    For each (test, method) pair the smallest number of frames between the
    test function and the method frame is kept, together with the chain of
    code names along that path.
    """

    def __init__(self, methods: list[dict]) -> None:
        self.by_location: dict[tuple[str, int, str], str] = {}
        for m in methods:
            path = os.path.realpath(m["file"])
            for line in m["lines"]:
                self.by_location[(path, line, m["name"])] = m["id"]
        self.cache: dict[object, str | None] = {}
        self.test_id: str | None = None
        self.test_code = None
        self.hits: dict[str, tuple[int | None, list[str]]] = {}
        self.returns: dict[str, set[str]] = {}

    def _method_of(self, code) -> str | None:
        try:
            return self.cache[code]
        except KeyError:
            mid = self.by_location.get(
                (os.path.realpath(code.co_filename), code.co_firstlineno, code.co_name)
            )
            self.cache[code] = mid
            return mid

    def begin(self, test_id: str, test_code) -> None:
        self.test_id = test_id
        self.test_code = test_code
        self.hits = {}
        sys.setprofile(self._hook)
        threading.setprofile(self._hook)

    def end(self, path: str) -> None:
        sys.setprofile(None)
        threading.setprofile(None)
        with open(path, "a", encoding="utf-8") as fh:
            for mid, (dist, chain) in sorted(self.hits.items()):
                fh.write(json.dumps({"test_id": self.test_id, "method_id": mid,
                                     "distance": dist, "chain": chain}) + "\n")
            for mid, kinds in sorted(self.returns.items()):
                fh.write(json.dumps({"method_id": mid, "return_kinds": sorted(kinds)}) + "\n")
        self.returns = {}
        self.test_id = None

    def _hook(self, frame, event, arg):
        if event == "call":
            mid = self._method_of(frame.f_code)
            if mid is None:
                return
            dist, chain = self._distance(frame)
            best = self.hits.get(mid)
            if best is None or (dist is not None and (best[0] is None or dist < best[0])):
                self.hits[mid] = (dist, chain)
        elif event == "return":
            mid = self._method_of(frame.f_code)
            if mid is None:
                return
            code = frame.f_code
            if frame.f_lasti < 0 or code.co_code[frame.f_lasti] != _RETURN_VALUE:
                return
            self.returns.setdefault(mid, set()).add(_kind(arg))

    def _distance(self, frame) -> tuple[int | None, list[str]]:
        if self.test_code is None:
            return None, []
        chain = []
        f = frame.f_back
        hops = 1
        while f is not None and hops < 200:
            if f.f_code is self.test_code:
                return hops, list(reversed(chain))
            chain.append(self._method_of(f.f_code) or f"<{f.f_code.co_name}>")
            f = f.f_back
            hops += 1
        return None, []


def _kind(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "boolean"
    if isinstance(v, int):
        return "integer"
    if isinstance(v, float):
        return "float"
    if isinstance(v, str):
        return "string"
    if isinstance(v, (list, tuple)):
        return "array"
    return "reference"
