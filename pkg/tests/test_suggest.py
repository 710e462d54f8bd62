import json
import textwrap

import pytest

from conftest import EMPTY_TRUE, EQUALS_TRUE, INCREMENT
from riptide.analyzer import INCONCLUSIVE, NO_INFECTION, NO_PROPAGATION, WEAK_ORACLE, SymptomDiagnosis
from riptide.observation import DiffEntry, Key, StateDiff
from riptide.project import methods_in_source
from riptide.static import build_call_graph
from riptide.suggest import (SCHEMA_VERSION, Suggestion, choose_site, parse_catalog, render_report, suggest)
from riptide.transform import ExtremeTransformation

SRC = textwrap.dedent('''
    class Meter:
        def __init__(self):
            self._hits = 0
            self.__secret = 0
            self.level = 0

        def hit(self):
            self._hits += 1
            self.__secret += 1
            self.level = 2

        def hits(self):
            return self._hits

        def _bump(self):
            self.level += 1
''')
METHODS = {m.qualname: m for m in methods_in_source("meter.py", SRC)}
GRAPH = build_call_graph(".", METHODS.values(), sources={"meter.py": SRC})
HIT = METHODS["Meter.hit"]
T_HIT = ExtremeTransformation(HIT.id + "=>void-empty", HIT.id, "void-empty", 0)
T_BUMP = ExtremeTransformation(METHODS["Meter._bump"].id + "=>void-empty", METHODS["Meter._bump"].id,
                               "void-empty", 0)
SITE = "tests/test_meter.py:5:4:5:5"
OWNER = "object:meter.Meter"


def method_diff(point=HIT.id):
    return StateDiff([DiffEntry(Key("t::a", point, 0, "this.level"), "2", "0")])


def weak(path, original="1", transformed="0", depth=0, site=SITE):
    line, col = map(int, site.split(":")[1:3])
    ctx = {"sites": {site: {"test_id": "t::a", "depth": depth, "line": line, "col": col, "end_line": line,
                            "end_col": col + 1, "text": "m", "file": "tests/test_meter.py",
                            "owner_kind": OWNER}}}
    test_diff = StateDiff([DiffEntry(Key("t::a", site, 0, path), original, transformed)])
    return SymptomDiagnosis(T_HIT.id, WEAK_ORACLE, method_diff(), test_diff, ("t::a",), context=ctx)


def by_methods(d, t=T_HIT):
    return suggest(d, t, GRAPH, {m.id: m for m in METHODS.values()})


def test_private_field_is_checked_through_its_observer():
    s = by_methods(weak("hits"))
    s.check()
    assert s.template == "new-assertion"
    assert s.target_methods == (METHODS["Meter.hits"].id,)
    assert "`m.hits()` equals 1" in s.narrative
    assert s.assertion_site.property_path == "hits" and s.assertion_site.expected_value == "1"


def test_unobservable_private_field_gives_a_refactoring_note():
    s = by_methods(weak("secret"))
    s.check()
    assert s.template == "refactoring-note" and s.assertion_site is None
    assert "no accessible method reads it" in s.narrative


def test_public_field_and_direct_values():
    assert "`m.level` equals 1" in by_methods(weak("level")).narrative
    assert "`m` equals 1" in by_methods(weak("value")).narrative
    assert "`len(m)` equals 1" in by_methods(weak("size")).narrative


def test_shallowest_site_wins():
    d = weak("level")
    deep = "tests/test_meter.py:3:4:3:5"
    d.test_diff.entries.append(DiffEntry(Key("t::a", deep, 0, "level"), "1", "0"))
    d.context["sites"][deep] = dict(d.context["sites"][SITE], depth=2, line=3)
    assert choose_site(d).key.point_id == SITE


def test_no_infection_and_no_propagation_templates():
    ni = SymptomDiagnosis(T_HIT.id, NO_INFECTION, covering_tests=("t::b", "t::a"))
    s = by_methods(ni)
    assert s.template == "new-input" and s.seed_tests == ("t::a", "t::b")
    np_ = SymptomDiagnosis(T_HIT.id, NO_PROPAGATION, method_diff(), covering_tests=("t::a",))
    s = by_methods(np_)
    assert s.template == "new-test" and s.target_methods == (HIT.id,)
    hidden = SymptomDiagnosis(T_BUMP.id, NO_PROPAGATION, method_diff(T_BUMP.method), covering_tests=("t::a",))
    s = by_methods(hidden, T_BUMP)
    assert s.template == "refactoring-note" and s.target_methods == ()
    assert by_methods(SymptomDiagnosis(T_HIT.id, INCONCLUSIVE)) is None


def test_catalog_round_trip_and_schema_check():
    suggestions = [by_methods(weak("hits")), by_methods(SymptomDiagnosis(T_HIT.id, NO_INFECTION))]
    report = render_report(suggestions, [SymptomDiagnosis("z", INCONCLUSIVE, diagnostic="degraded")],
                           project="meter")
    assert parse_catalog(report.catalog) == sorted(suggestions, key=lambda s: s.symptom != NO_INFECTION)
    header = json.loads(report.catalog.splitlines()[0])
    assert header == {"kind": "header", "project": "meter", "schema_version": SCHEMA_VERSION}
    assert "## Inconclusive (1)" in report.markdown and "degraded" in report.markdown
    with pytest.raises(ValueError):
        parse_catalog(report.catalog.replace(f'"schema_version": {SCHEMA_VERSION}', '"schema_version": 99'))
    for s in suggestions:
        assert Suggestion.from_record(s.to_record()) == s


def test_empty_report_has_a_banner():
    report = render_report([])
    assert "No undetected transformations" in report.markdown
    assert parse_catalog(report.catalog) == []


def test_fixture_report(versioned_set_campaign):
    c = versioned_set_campaign.campaign
    md = (c.report_dir / "report.md").read_text(encoding="utf-8")
    assert md.index("## No infection") < md.index("## No propagation") < md.index("## Weak oracle")
    catalog = {s.transformation_id: s for s in parse_catalog((c.report_dir / "suggestions.jsonl").read_text())}
    assert catalog[EQUALS_TRUE].template == "new-input"
    assert catalog[EMPTY_TRUE].template == "new-test"
    assert catalog[EMPTY_TRUE].target_methods == ("versioned_set.py::VersionedSet.is_empty()",)
    assert catalog[INCREMENT].assertion_site.point_id == "tests/test_versioned_set.py:7:11:7:15"
    for s in catalog.values():
        s.check()
