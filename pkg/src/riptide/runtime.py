"""Observation runtime called from instrumented subject code.

Instrumented methods call :func:`leave` on every exit; instrumented tests wrap
expressions in :func:`obs`. Records are buffered and appended to the log
named by ``RIPTIDE_OBS_LOG`` when a test ends. Nothing is recorded outside a
running test, and observation never re-enters itself.
"""
from __future__ import annotations

import atexit
import json
import os
from typing import Any

from riptide.state import state_items

NO_RECEIVER = object()

_log_path: str | None = None
_run_index = 0
_test_id: str | None = None
_counters: dict[str, int] = {}
_buffer: list[str] = []
_busy = False


def configure() -> None:
    """(Re)read the log location from the environment."""
    global _log_path, _run_index
    _log_path = os.environ.get("RIPTIDE_OBS_LOG")
    _run_index = int(os.environ.get("RIPTIDE_RUN_INDEX", "0"))


configure()


def begin_test(test_id: str) -> None:
    global _test_id
    flush()
    _test_id = test_id
    _counters.clear()


def end_test() -> None:
    global _test_id
    flush()
    _test_id = None


def flush() -> None:
    if not _buffer:
        return
    if _log_path:
        with open(_log_path, "a", encoding="utf-8") as fh:
            fh.write("\n".join(_buffer))
            fh.write("\n")
    _buffer.clear()


atexit.register(flush)


def _record(point_id: str, prefix: str, value: Any, invocation: int) -> None:
    for path, rendered, kind in state_items(value):
        _buffer.append(
            json.dumps(
                {
                    "run_index": _run_index,
                    "test_id": _test_id,
                    "point_id": point_id,
                    "invocation_index": invocation,
                    "path": prefix + path,
                    "value": rendered,
                    "value_kind": kind,
                },
                ensure_ascii=False,
            )
        )


def _next_invocation(point_id: str) -> int:
    k = _counters.get(point_id, 0)
    _counters[point_id] = k + 1
    return k


def leave(method_id: str, receiver: Any, args: tuple, result: Any, has_result: bool = True) -> Any:
    """Record the local state at a method exit and hand *result* back."""
    global _busy
    if _busy or _test_id is None:
        return result
    _busy = True
    try:
        k = _next_invocation(method_id)
        if receiver is not NO_RECEIVER:
            _record(method_id, "this.", receiver, k)
        for i, arg in enumerate(args):
            _record(method_id, f"arg{i}.", arg, k)
        if has_result:
            _record(method_id, "result.", result, k)
    except Exception:
        pass
    finally:
        _busy = False
    return result


def obs(site_id: str, value: Any) -> Any:
    """Record the state of a test expression value and return it unchanged."""
    global _busy
    if _busy or _test_id is None:
        return value
    _busy = True
    try:
        _record(site_id, "", value, _next_invocation(site_id))
    except Exception:
        pass
    finally:
        _busy = False
    return value
