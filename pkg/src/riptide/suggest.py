"""Improvement suggestions and report rendering.

Narratives come from fixed templates filled with identifiers from the
evidence, so the same evidence always gives the same text.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

from riptide.analyzer import (
    NO_INFECTION, NO_PROPAGATION, SYMPTOMS, WEAK_ORACLE, SymptomDiagnosis,
)
from riptide.observation import DiffEntry, StateDiff
from riptide.project import MethodDescriptor
from riptide.static import CallGraph, accessible_entry_points, field_observers
from riptide.transform import VOID, ExtremeTransformation

SCHEMA_VERSION = 1
TEMPLATES = ("new-input", "new-test", "new-assertion", "refactoring-note")
# leaves of the basic state of a value: asserted on the expression itself
_DIRECT = {"value", "null", "size", "length", "size.error", "error"}
_TITLES = {
    NO_INFECTION: "No infection",
    NO_PROPAGATION: "No propagation",
    WEAK_ORACLE: "Weak oracle",
}


@dataclass(frozen=True)
class AssertionSite:
    test_id: str
    file: str
    line: int
    col: int
    end_line: int
    end_col: int
    expression: str
    property_path: str
    expected_value: str
    invocation_index: int = 0

    @property
    def point_id(self) -> str:
        return f"{self.file}:{self.line}:{self.col}:{self.end_line}:{self.end_col}"


@dataclass(frozen=True)
class Suggestion:
    transformation_id: str
    symptom: str
    template: str
    method_id: str
    stub_value: str
    seed_tests: tuple[str, ...] = ()
    target_methods: tuple[str, ...] = ()
    assertion_site: AssertionSite | None = None
    narrative: str = ""
    evidence: tuple[tuple[str, ...], ...] = ()
    call_chain: tuple[str, ...] = ()

    def check(self) -> None:
        expected = {NO_INFECTION: {"new-input"}, NO_PROPAGATION: {"new-test", "refactoring-note"},
                    WEAK_ORACLE: {"new-assertion", "refactoring-note"}}[self.symptom]
        assert self.template in expected, (self.symptom, self.template)
        assert (self.assertion_site is not None) == (self.template == "new-assertion")

    def to_record(self) -> dict:
        r = asdict(self)
        r["seed_tests"] = list(self.seed_tests)
        r["target_methods"] = list(self.target_methods)
        r["evidence"] = [list(e) for e in self.evidence]
        r["call_chain"] = list(self.call_chain)
        return r

    @classmethod
    def from_record(cls, r: Mapping) -> "Suggestion":
        site = r.get("assertion_site")
        return cls(
            r["transformation_id"], r["symptom"], r["template"], r["method_id"], r["stub_value"],
            tuple(r["seed_tests"]), tuple(r["target_methods"]),
            AssertionSite(**site) if site else None, r["narrative"],
            tuple(tuple(e) for e in r["evidence"]), tuple(r["call_chain"]),
        )


# --------------------------------------------------------------------------- helpers


def method_label(method_id: str) -> str:
    """``pkg/mod.py::Cls.m(a, b)`` -> ``Cls.m``."""
    return method_id.split("::", 1)[-1].split("(", 1)[0]


def stub_label(stub: str) -> str:
    return "an empty body" if stub == VOID else f"`return {stub}`"


def test_label(test_id: str) -> str:
    return test_id.split("::", 1)[-1]


def _evidence(diff: StateDiff) -> tuple[tuple[str, ...], ...]:
    return tuple(
        (e.key.test_id, e.key.point_id, str(e.key.invocation_index), e.key.path, e.original, e.transformed)
        for e in diff.entries
    )


def _names(ids: Iterable[str]) -> str:
    return ", ".join(f"`{test_label(i)}`" for i in ids)


def _diff_summary(diff: StateDiff, limit: int = 3) -> str:
    parts = [f"`{e.key.path}` was {e.original} and became {e.transformed}" for e in diff.entries[:limit]]
    more = len(diff.entries) - limit
    if more > 0:
        parts.append(f"{more} more difference{'s' if more > 1 else ''}")
    return "; ".join(parts)


# --------------------------------------------------------------------------- templates


def suggest_no_infection(d: SymptomDiagnosis, t: ExtremeTransformation) -> Suggestion:
    name = method_label(t.method)
    seeds = tuple(sorted(d.covering_tests))
    narrative = (
        f"`{name}` was given {stub_label(t.stub_value)} and no covering test noticed. "
        f"The state at every exit of the method stayed exactly as in the original, so the current "
        f"inputs cannot tell the two versions apart. "
        f"Write a new test, starting from {_names(seeds)}, with inputs that make `{name}` produce "
        f"a different result or a different side effect."
    )
    return Suggestion(t.id, NO_INFECTION, "new-input", t.method, t.stub_value, seeds, (), None, narrative)


def suggest_no_propagation(
    d: SymptomDiagnosis,
    t: ExtremeTransformation,
    entry_points: Sequence[MethodDescriptor],
    chain: Sequence[str] = (),
) -> Suggestion:
    name = method_label(t.method)
    seeds = tuple(sorted(d.covering_tests))
    targets = tuple(m.id for m in entry_points)
    head = (
        f"`{name}` was given {stub_label(t.stub_value)}. The change corrupts the state right after "
        f"the call ({_diff_summary(d.method_diff)}), but the difference is masked before it reaches "
        f"the covering tests {_names(seeds)}."
    )
    path = ""
    if len(chain) > 1:
        path = " Shortest observed call path from a test: " + " -> ".join(f"`{method_label(c)}`" for c in chain) + "."
    if targets:
        listed = ", ".join(f"`{method_label(x)}`" for x in targets)
        body = (f" Write a new test that calls {listed} directly and checks the outcome "
                f"(entry points ranked by shortest call path).")
        template = "new-test"
    else:
        body = (" No accessible method reaches it, so no test can target it directly. "
                "Consider making it reachable from the public interface.")
        template = "refactoring-note"
    return Suggestion(t.id, NO_PROPAGATION, template, t.method, t.stub_value, seeds, targets, None,
                      head + body + path, _evidence(d.method_diff), tuple(chain))


def _site_rank(entry: DiffEntry, sites: Mapping[str, Mapping]) -> tuple:
    s = sites.get(entry.key.point_id, {})
    return (s.get("depth", 0), s.get("file", ""), s.get("line", 0), s.get("col", 0),
            entry.key.test_id, entry.key.invocation_index, entry.key.path)


def choose_site(d: SymptomDiagnosis) -> DiffEntry:
    """Shallowest differing site, then earliest in the source."""
    sites = d.context.get("sites", {})
    return min(d.test_diff.entries, key=lambda e: _site_rank(e, sites))


def _owner_class(kind: str) -> str | None:
    if not kind.startswith("object:"):
        return None
    return kind.rsplit(".", 1)[-1]


def suggest_weak_oracle(
    d: SymptomDiagnosis, t: ExtremeTransformation, graph: CallGraph | None = None
) -> Suggestion:
    name = method_label(t.method)
    seeds = tuple(sorted(d.covering_tests))
    entry = choose_site(d)
    site = d.context.get("sites", {}).get(entry.key.point_id, {})
    expr = site.get("text", entry.key.point_id)
    path = entry.key.path
    where = f"{site.get('file', '')}:{site.get('line', 0)} in `{test_label(entry.key.test_id)}`"
    assertion = AssertionSite(
        entry.key.test_id, site.get("file", ""), site.get("line", 0), site.get("col", 0),
        site.get("end_line", 0), site.get("end_col", 0), expr, path, entry.original,
        entry.key.invocation_index,
    )
    head = (
        f"`{name}` was given {stub_label(t.stub_value)}. The difference reaches the test code: "
        f"the value of `{expr}` at {where} has `{path}` = {entry.original} originally and "
        f"{entry.transformed} after the change, yet no assertion checks it."
    )
    targets: tuple[str, ...] = ()
    field_name = path.split(".", 1)[0]
    info = None
    cls = _owner_class(site.get("owner_kind", ""))
    if path not in _DIRECT and graph is not None and cls is not None:
        info = graph.find_field(f"{cls}.{field_name}")
    if info is not None and info.private:
        observers = field_observers(info, graph)
        if not observers:
            narrative = head + (
                f" The field `{field_name}` is private and no accessible method reads it, so there "
                f"is no way to verify the effect from the test code. Consider exposing it or "
                f"restructuring `{name}` so its effect becomes observable.")
            return Suggestion(t.id, WEAK_ORACLE, "refactoring-note", t.method, t.stub_value, seeds,
                              (), None, narrative, _evidence(d.test_diff))
        targets = tuple(m.id for m in observers)
        first = method_label(observers[0].id).rsplit(".", 1)[-1]
        leaf = path.split(".", 1)[1] if "." in path else "value"
        what = f"`{expr}.{first}()`" + ("" if leaf == "value" else f" (its `{leaf}`)")
        others = ""
        if len(observers) > 1:
            others = " Other methods reading it: " + ", ".join(
                f"`{method_label(m.id)}`" for m in observers[1:]) + "."
        narrative = head + (f" `{field_name}` is private; add an assertion after that line that {what} "
                            f"equals {entry.original}.{others}")
    elif path in _DIRECT:
        what = {"value": f"`{expr}`", "null": f"`{expr}` is None"}.get(path, f"`len({expr})`")
        if path == "null":
            narrative = head + f" Add an assertion there on whether {what} (expected {entry.original})."
        else:
            narrative = head + f" Add an assertion there that {what} equals {entry.original}."
    else:
        narrative = head + (f" Add an assertion after that line that `{expr}.{field_name}`"
                            + ("" if path == field_name else f" (property `{path}`)")
                            + f" equals {entry.original}.")
    return Suggestion(t.id, WEAK_ORACLE, "new-assertion", t.method, t.stub_value, seeds, targets,
                      assertion, narrative, _evidence(d.test_diff))


def suggest(
    d: SymptomDiagnosis,
    t: ExtremeTransformation,
    graph: CallGraph | None,
    methods: Mapping[str, MethodDescriptor],
    chain: Sequence[str] = (),
) -> Suggestion | None:
    if d.symptom == NO_INFECTION:
        return suggest_no_infection(d, t)
    if d.symptom == NO_PROPAGATION:
        m = methods[t.method]
        entries = accessible_entry_points(m, graph) if graph is not None else (
            [m] if m.externally_invokable else [])
        return suggest_no_propagation(d, t, entries, chain)
    if d.symptom == WEAK_ORACLE:
        return suggest_weak_oracle(d, t, graph)
    return None


# --------------------------------------------------------------------------- rendering


def _table(rows: Sequence[Sequence[str]]) -> list[str]:
    out = ["| test | site | call # | property | original | transformed |",
           "|---|---|---|---|---|---|"]
    for r in rows:
        cells = [test_label(r[0]), r[1], r[2], r[3], r[4], r[5]]
        out.append("| " + " | ".join(c.replace("|", "\\|") for c in cells) + " |")
    return out


@dataclass
class Report:
    markdown: str
    catalog: str
    suggestions: list[Suggestion] = field(default_factory=list)


def render_report(
    suggestions: Iterable[Suggestion],
    inconclusive: Iterable[SymptomDiagnosis] = (),
    *,
    project: str = "",
    summary_lines: Sequence[str] = (),
) -> Report:
    """Human report grouped by symptom plus a machine-readable catalog."""
    sugg = sorted(suggestions, key=lambda s: (SYMPTOMS.index(s.symptom), s.transformation_id))
    inc = sorted(inconclusive, key=lambda d: d.transformation_id)
    lines = [f"# Test improvement report{': ' + project if project else ''}", ""]
    lines += list(summary_lines) + ([""] if summary_lines else [])
    if not sugg and not inc:
        lines += ["**No undetected transformations.** Every extreme transformation of a covered "
                  "method makes at least one test fail.", ""]
    for symptom in SYMPTOMS:
        group = [s for s in sugg if s.symptom == symptom]
        if not group:
            continue
        lines += [f"## {_TITLES[symptom]} ({len(group)})", ""]
        for s in group:
            lines += [f"### `{method_label(s.method_id)}` with {stub_label(s.stub_value)}", "",
                      f"- transformation: `{s.transformation_id}`",
                      f"- suggestion: {s.template}"]
            if s.seed_tests:
                lines.append(f"- covering tests: {_names(s.seed_tests)}")
            if s.target_methods:
                lines.append("- target methods: " + ", ".join(f"`{method_label(x)}`" for x in s.target_methods))
            if s.assertion_site:
                a = s.assertion_site
                lines.append(f"- assert at `{a.file}:{a.line}:{a.col}` on `{a.expression}`, "
                             f"property `{a.property_path}`, expected `{a.expected_value}`")
            lines += ["", s.narrative, ""]
            if s.evidence:
                lines += _table(s.evidence) + [""]
    if inc:
        lines += [f"## Inconclusive ({len(inc)})", ""]
        for d in inc:
            lines.append(f"- `{d.transformation_id}`: {d.diagnostic or 'no diagnostic'}")
        lines.append("")
    records = [{"schema_version": SCHEMA_VERSION, "kind": "header", "project": project}]
    records += [dict(kind="suggestion", **s.to_record()) for s in sugg]
    records += [{"kind": "inconclusive", "transformation_id": d.transformation_id,
                 "diagnostic": d.diagnostic, "flags": list(d.flags)} for d in inc]
    catalog = "".join(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n" for r in records)
    return Report("\n".join(lines).rstrip("\n") + "\n", catalog, sugg)


def parse_catalog(text: str) -> list[Suggestion]:
    out = []
    for line in text.splitlines():
        if not line.strip():
            continue
        r = json.loads(line)
        if r.get("kind") == "header" and r.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported catalog schema {r.get('schema_version')}")
        if r.get("kind") == "suggestion":
            r = dict(r)
            del r["kind"]
            out.append(Suggestion.from_record(r))
    return out

