"""Cross-run invariant states and state differences.

An observation key is ``(test_id, point_id, invocation_index, path)``. A
state built from N runs keeps a key only if it was present in every run with
the same rendered value.
"""
from __future__ import annotations

import os
import tempfile
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple

from riptide.config import ExecutionConfig
from riptide.runner import TestRunReport, execute
from riptide.store import iter_jsonl, write_jsonl

METHOD_ROOTS = ("this", "result")


class Key(NamedTuple):
    test_id: str
    point_id: str
    invocation_index: int
    path: str


@dataclass
class InvariantState:
    values: dict[Key, str] = field(default_factory=dict)
    kinds: dict[Key, str] = field(default_factory=dict)
    runs: int = 0
    dropped: int = 0
    degraded: bool = False
    diagnostic: str = ""
    outcomes: list[dict[str, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.values)

    def get(self, key: Key) -> str | None:
        return self.values.get(key)

    def failing_tests(self) -> set[str]:
        return {t for run in self.outcomes for t, o in run.items() if o in ("fail", "error", "timeout")}

    def to_records(self) -> list[dict]:
        return [
            {"test_id": k.test_id, "point_id": k.point_id, "invocation_index": k.invocation_index,
             "path": k.path, "value": v, "value_kind": self.kinds.get(k, "")}
            for k, v in sorted(self.values.items())
        ]

    def save(self, path: Path) -> None:
        header = {"runs": self.runs, "dropped": self.dropped, "degraded": self.degraded,
                  "diagnostic": self.diagnostic, "outcomes": self.outcomes}
        write_jsonl(path, [{"header": header}] + self.to_records())

    @classmethod
    def load(cls, path: Path) -> "InvariantState":
        s = cls()
        for rec in iter_jsonl(path):
            if "header" in rec:
                h = rec["header"]
                s.runs, s.dropped, s.degraded = h["runs"], h["dropped"], h["degraded"]
                s.diagnostic, s.outcomes = h["diagnostic"], h["outcomes"]
                continue
            k = Key(rec["test_id"], rec["point_id"], rec["invocation_index"], rec["path"])
            s.values[k] = rec["value"]
            s.kinds[k] = rec["value_kind"]
        return s


def record_key(rec: Mapping) -> Key:
    return Key(rec["test_id"], rec["point_id"], rec["invocation_index"], rec["path"])


def snapshot(records: Iterable[Mapping]) -> dict[Key, str | None]:
    """Values of one run. A key seen twice with different values maps to ``None``."""
    out: dict[Key, str | None] = {}
    for rec in records:
        k = record_key(rec)
        if k in out and out[k] != rec["value"]:
            out[k] = None
        else:
            out.setdefault(k, rec["value"])
    return out


def aggregate(run_logs: list[list[Mapping]]) -> InvariantState:
    """Keep the keys present in every run with one constant value."""
    state = InvariantState(runs=len(run_logs))
    if not run_logs:
        return state
    snaps = [snapshot(log) for log in run_logs]
    kinds: dict[Key, str] = {}
    for log in run_logs:
        for rec in log:
            kinds.setdefault(record_key(rec), rec.get("value_kind", ""))
    every = set().union(*snaps)
    for k in every:
        vals = {s.get(k, _MISSING) for s in snaps}
        if len(vals) == 1:
            (v,) = vals
            if v is not _MISSING and v is not None:
                state.values[k] = v
                state.kinds[k] = kinds.get(k, "")
                continue
        state.dropped += 1
    return state


_MISSING = object()


def observe(
    project_root: Path,
    tests: Iterable[str],
    runs: int,
    environment: ExecutionConfig,
    *,
    env: Mapping[str, str] | None = None,
) -> InvariantState:
    """Run *tests* ``runs`` times in fresh processes and aggregate their logs.

    The project at *project_root* must already be instrumented. Any incomplete
    run marks the state degraded.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    tests = sorted(set(tests))
    logs: list[list[dict]] = []
    reports: list[TestRunReport] = []
    with tempfile.TemporaryDirectory(prefix="riptide-obs-") as tmp:
        for i in range(runs):
            log_path = os.path.join(tmp, f"run{i}.jsonl")
            run_env = dict(env or {})
            run_env.update({"RIPTIDE_OBS_LOG": log_path, "RIPTIDE_RUN_INDEX": str(i)})
            rep = execute(project_root, tests, environment, env=run_env)
            reports.append(rep)
            logs.append(list(iter_jsonl(log_path)) if os.path.exists(log_path) else [])
    state = aggregate(logs)
    state.outcomes = [{t: r.outcome for t, r in sorted(rep.results.items())} for rep in reports]
    problems = [rep.diagnostic for rep in reports if not rep.complete]
    if problems:
        state.degraded = True
        state.diagnostic = problems[0]
    return state


# --------------------------------------------------------------------------- diffs


class DiffEntry(NamedTuple):
    key: Key
    original: str
    transformed: str

    def to_record(self) -> dict:
        k = self.key
        return {"test_id": k.test_id, "point_id": k.point_id, "invocation_index": k.invocation_index,
                "path": k.path, "original": self.original, "transformed": self.transformed}

    @classmethod
    def from_record(cls, r: Mapping) -> "DiffEntry":
        return cls(Key(r["test_id"], r["point_id"], r["invocation_index"], r["path"]),
                   r["original"], r["transformed"])


@dataclass
class StateDiff:
    entries: list[DiffEntry] = field(default_factory=list)
    asymmetric_keys: int = 0

    def __bool__(self) -> bool:
        return bool(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def locus(self) -> list[str]:
        """Sorted roots touched by the diff: ``result``, ``argK``, ``this`` or ``test``."""
        return sorted({root_of(e.key.path) for e in self.entries})

    def to_dict(self) -> dict:
        return {"entries": [e.to_record() for e in self.entries], "asymmetric_keys": self.asymmetric_keys}

    @classmethod
    def from_dict(cls, d: Mapping) -> "StateDiff":
        return cls([DiffEntry.from_record(r) for r in d["entries"]], d["asymmetric_keys"])


def root_of(path: str) -> str:
    head = path.split(".", 1)[0]
    if head in METHOD_ROOTS or (head.startswith("arg") and head[3:].isdigit()):
        return head
    return "test"


def _values(s: InvariantState | Mapping[Key, str]) -> Mapping[Key, str]:
    return s.values if isinstance(s, InvariantState) else s


def get_diff(s1: InvariantState | Mapping, s2: InvariantState | Mapping) -> StateDiff:
    """Entries for keys present in both states with different values."""
    a, b = _values(s1), _values(s2)
    common = a.keys() & b.keys()
    entries = sorted(DiffEntry(k, a[k], b[k]) for k in common if a[k] != b[k])
    return StateDiff(entries, len(a.keys() ^ b.keys()))


def match_invocations(
    original: Iterable[Mapping], transformed: Iterable[Mapping]
) -> tuple[list[tuple[list[dict], list[dict]]], int]:
    """Pair the k-th invocation of each point per test across two logs.

    Returns the record pairs (one pair of record lists per matched invocation)
    and the number of unpaired invocations.
    """
    def group(log):
        g: dict[tuple[str, str], dict[int, list[dict]]] = defaultdict(lambda: defaultdict(list))
        for rec in log:
            g[(rec["test_id"], rec["point_id"])][rec["invocation_index"]].append(dict(rec))
        return g

    ga, gb = group(original), group(transformed)
    pairs, unpaired = [], 0
    for point in sorted(ga.keys() | gb.keys()):
        ia, ib = ga.get(point, {}), gb.get(point, {})
        for k in sorted(ia.keys() | ib.keys()):
            if k in ia and k in ib:
                pairs.append((ia[k], ib[k]))
            else:
                unpaired += 1
    return pairs, unpaired
