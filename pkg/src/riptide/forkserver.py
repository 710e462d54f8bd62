"""Fork server for fast test runs.

Started once with pytest already imported; every request forks a child that
applies the requested environment, runs ``pytest.main`` and exits. Subject
code is only ever imported in the children, so each run starts from the same
pristine interpreter state without paying for interpreter and pytest start-up.

Protocol: one JSON request per line on stdin, one JSON reply per line on
stdout (``{"code": int | null}``; ``null`` means the run was killed).
"""
from __future__ import annotations

import json
import os
import select
import signal
import sys
import time


def _base_path() -> list[str]:
    skip = set(filter(None, os.environ.get("PYTHONPATH", "").split(os.pathsep)))
    return [p for p in sys.path[1:] if p not in skip]


def _child(req: dict, base: list[str]) -> None:
    code = 3
    try:
        os.setsid()
        out = os.open(req["output"], os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o644)
        os.dup2(out, 1)
        os.dup2(out, 2)
        os.close(out)
        devnull = os.open(os.devnull, os.O_RDONLY)
        os.dup2(devnull, 0)
        os.close(devnull)
        sys.stdin = open(0, closefd=False)
        signal.signal(signal.SIGTERM, signal.SIG_DFL)
        os.chdir(req["cwd"])
        os.environ.clear()
        os.environ.update(req["env"])
        extra = [p for p in req["env"].get("PYTHONPATH", "").split(os.pathsep) if p]
        sys.path[:] = [req["cwd"]] + extra + base
        sys.argv = [sys.argv[0]]
        import pytest

        code = pytest.main(list(req["args"]))
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 3
    except BaseException:
        import traceback

        traceback.print_exc()
    finally:
        try:
            sys.stdout.flush()
            sys.stderr.flush()
        finally:
            os._exit(int(code))


def _wait(pid: int, limit: float) -> int | None:
    deadline = time.monotonic() + limit
    try:
        fd = os.pidfd_open(pid)
    except (AttributeError, OSError):
        fd = None
    try:
        while True:
            done, status = os.waitpid(pid, os.WNOHANG)
            if done:
                return os.waitstatus_to_exitcode(status)
            left = deadline - time.monotonic()
            if left <= 0:
                try:
                    os.killpg(pid, signal.SIGKILL)
                except ProcessLookupError:
                    pass
                os.waitpid(pid, 0)
                return None
            if fd is not None:
                select.select([fd], [], [], left)
            else:
                time.sleep(min(0.005, left))
    finally:
        if fd is not None:
            os.close(fd)


def _warm() -> None:
    """Import what every pytest session needs, once, before forking.

    Our own plugin is left out on purpose: pytest warns when a ``-p`` plugin
    is already imported, and that warning would be visible to the subject.
    """
    import importlib

    import _pytest.config

    for name in _pytest.config.default_plugins:
        try:
            importlib.import_module(f"_pytest.{name}")
        except ImportError:
            pass
    for name in ("_pytest.assertion.rewrite", "pdb", "code", "faulthandler"):
        try:
            importlib.import_module(name)
        except ImportError:
            pass


def serve() -> None:
    base = _base_path()
    _warm()

    reply = sys.stdout
    for line in sys.stdin:
        if not line.strip():
            continue
        req = json.loads(line)
        pid = os.fork()
        if pid == 0:
            _child(req, base)
        code = _wait(pid, float(req["limit"]))
        reply.write(json.dumps({"code": code}) + "\n")
        reply.flush()


if __name__ == "__main__":
    serve()
