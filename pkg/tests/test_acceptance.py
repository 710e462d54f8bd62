"""Acceptance gate: one test per criterion, summarized at the end of the run."""
import hashlib
import itertools
import json
import random
import sys
from pathlib import Path

import pytest

from conftest import (ADD, EMPTY_FALSE, EMPTY_TRUE, EQUALS_FALSE, EQUALS_TRUE, FIXTURES, INCREMENT,
                      INTERSECT_NONE, copy_fixture)
from riptide import cli
from riptide.analyzer import INCONCLUSIVE, NO_INFECTION, NO_PROPAGATION, SYMPTOMS, WEAK_ORACLE
from riptide.campaign import Campaign, CampaignError
from riptide.config import load_campaign_config, load_execution_config
from riptide.instrument import instrument_method, instrument_tests
from riptide.observation import Key, get_diff
from riptide.project import discover_methods, discover_tests
from riptide.runner import execute
from riptide.state import StateProperty, value_state
from riptide.store import iter_jsonl
from riptide.suggest import parse_catalog
from variants import make_variant

ALL_FIXTURES = sorted(p.name for p in FIXTURES.iterdir() if (p / "riptide.cfg").exists())


@pytest.mark.criterion(1, "fixture end-to-end: 7 transformations, 3 detected, 4 undetected, < 5 min at N=10")
def test_fixture_end_to_end(versioned_set_campaign):
    ts = {t.id: t.detection for t in versioned_set_campaign.discovery.transformations}
    assert ts == {
        ADD: "detected", EQUALS_FALSE: "detected", INTERSECT_NONE: "detected",
        INCREMENT: "undetected", EQUALS_TRUE: "undetected", EMPTY_TRUE: "undetected", EMPTY_FALSE: "undetected",
    }
    assert versioned_set_campaign.campaign.config.runs == 10
    assert versioned_set_campaign.elapsed < 300


@pytest.mark.criterion(2, "symptom classification on the fixture")
def test_symptom_classification(versioned_set_campaign):
    got = {tid: d.symptom for tid, d in versioned_set_campaign.diagnoses.items()}
    assert got == {
        EQUALS_TRUE: NO_INFECTION,
        EMPTY_FALSE: NO_INFECTION,
        EMPTY_TRUE: NO_PROPAGATION,
        INCREMENT: WEAK_ORACLE,
    }


@pytest.mark.criterion(3, "weak-oracle evidence: version 1 -> 0, observer get_version expecting 1")
def test_weak_oracle_evidence(versioned_set_campaign):
    d = versioned_set_campaign.diagnoses[INCREMENT]
    entries = list(d.method_diff.entries) + list(d.test_diff.entries)
    assert any(e.key.path.endswith("version") and (e.original, e.transformed) == ("1", "0") for e in entries)
    assert all((e.original, e.transformed) == ("1", "0") for e in d.test_diff.entries
               if e.key.path.endswith("version"))

    catalog = (versioned_set_campaign.campaign.report_dir / "suggestions.jsonl").read_text(encoding="utf-8")
    (s,) = [s for s in parse_catalog(catalog) if s.transformation_id == INCREMENT]
    assert s.target_methods == ("versioned_set.py::VersionedSet.get_version()",)
    assert s.assertion_site.expected_value == "1"
    assert s.assertion_site.property_path.endswith("version")


@pytest.mark.criterion(4, "value_state of a fresh fixture set")
def test_fresh_set_state(monkeypatch):
    monkeypatch.setattr(sys, "dont_write_bytecode", True)
    monkeypatch.syspath_prepend(str(FIXTURES / "versioned_set"))
    monkeypatch.delitem(sys.modules, "versioned_set", raising=False)
    from versioned_set import VersionedSet

    assert value_state(VersionedSet()) == {
        StateProperty("null", "false"),
        StateProperty("version", "0"),
        StateProperty("elements.null", "false"),
        StateProperty("elements.size", "0"),
    }


@pytest.mark.slow
@pytest.mark.criterion(5, "nondeterminism filtering: no time-derived diff in 20 campaigns at N=10")
def test_nondeterminism_filtering(tmp_path):
    tag = "stopwatch.py::Event.tag(label)=>1"
    false_infections = []
    for i in range(20):
        root = copy_fixture(tmp_path / str(i), "clock")
        c = Campaign(load_campaign_config(root, runs=10, only=(tag,)))
        c.discover()
        (d,) = c.diagnose()
        assert d.symptom == WEAK_ORACLE
        for e in list(d.method_diff.entries) + list(d.test_diff.entries):
            site = d.context.get("sites", {}).get(e.key.point_id, {})
            if "created" in e.key.path or "now" == site.get("text"):
                false_infections.append(e)
        # the time-derived keys were seen and dropped, not simply never recorded
        originals = sorted((c.dir / "evidence" / "original").glob("*.jsonl"))
        headers = [next(iter_jsonl(p))["header"] for p in originals]
        assert all(h["runs"] == 10 for h in headers)
        assert sum(h["dropped"] for h in headers) > 0
        for p in originals:
            assert not any("created" in r.get("path", "") for r in iter_jsonl(p))
    assert false_infections == []


def _oracle(a: dict, b: dict):
    entries = []
    for k in sorted(set(a) | set(b)):
        if k in a and k in b and a[k] != b[k]:
            entries.append((k, a[k], b[k]))
    only_one = 0
    for k in set(a) | set(b):
        if (k in a) != (k in b):
            only_one += 1
    return entries, only_one


def _random_state(rng: random.Random, universe: list[Key]) -> dict:
    keys = rng.sample(universe, rng.randint(0, min(20, len(universe))))
    return {k: rng.choice(("0", "1", "true", "false", "null")) for k in keys}


@pytest.mark.criterion(6, "get_diff equals a brute-force oracle on 1000 random pairs")
def test_get_diff_oracle():
    rng = random.Random(6)
    universe = [Key(t, p, i, path) for t, p, i, path in itertools.product(
        ("t1", "t2"), ("m", "s"), (0, 1), ("result.value", "this.size", "arg0.null"))]
    mismatches = 0
    for _ in range(1000):
        a, b = _random_state(rng, universe), _random_state(rng, universe)
        diff = get_diff(a, b)
        got = ([(e.key, e.original, e.transformed) for e in diff.entries], diff.asymmetric_keys)
        mismatches += got != _oracle(a, b)
    assert mismatches == 0


def _instrument_everything(root: Path) -> int:
    """Instrument every method and every test in place; return the number of files touched."""
    touched = 0
    methods = discover_methods(root)
    for file, group in itertools.groupby(methods, key=lambda m: m.file):
        group = [m for m in group if not (m.is_generator or m.is_async)]
        if group:
            path = root / file
            path.write_text(instrument_method(path.read_text(encoding="utf-8"), group), encoding="utf-8")
            touched += 1
    tests = discover_tests(root)
    for file, group in itertools.groupby(tests, key=lambda t: t.file):
        path = root / file
        text, _ = instrument_tests(path.read_text(encoding="utf-8"), list(group))
        path.write_text(text, encoding="utf-8")
        touched += 1
    return touched


@pytest.mark.criterion(7, "behavior preservation: instrumented outcomes equal original outcomes")
def test_behavior_preservation(tmp_path):
    divergences = {}
    assert {"bank", "inventory", "versioned_set"} <= set(ALL_FIXTURES)
    for name in ALL_FIXTURES:
        root = copy_fixture(tmp_path, name)
        config = load_execution_config(root)
        before = execute(root, None, config)
        assert before.complete and before.results
        assert _instrument_everything(root) > 0
        log = tmp_path / f"{name}.jsonl"
        after = execute(root, None, config, env={"RIPTIDE_OBS_LOG": str(log)})
        assert after.complete
        assert log.exists() and log.stat().st_size > 0
        a = {t: r.outcome for t, r in before.results.items()}
        b = {t: r.outcome for t, r in after.results.items()}
        if a != b:
            divergences[name] = (a, b)
    assert divergences == {}


@pytest.mark.criterion(8, "stack distance: 2 and 2 on the fixture, 5 on a five-deep chain")
def test_stack_distance(versioned_set_campaign, tmp_path):
    dist = versioned_set_campaign.discovery.distances
    vs = "versioned_set.py::VersionedSet."
    assert dist[(vs + "is_empty()", "tests/test_versioned_set.py::test_intersection")] == 2
    assert dist[(vs + "__increment_version()", "tests/test_versioned_set.py::test_add")] == 2

    root = copy_fixture(tmp_path, "chain")
    disc = Campaign(load_campaign_config(root, runs=1)).discover()
    test = "tests/test_layers.py::test_level1_positive"
    assert [disc.distances[(f"layers.py::level{k}(x)", test)] for k in range(1, 6)] == [1, 2, 3, 4, 5]


def _check_partition(c: Campaign) -> int:
    disc = c.load_discovery()
    undetected = {t.id for t in disc.undetected()}
    finals = c.final_diagnoses(disc)
    assert sorted(d.transformation_id for _, d in finals) == sorted(undetected)
    for _, d in finals:
        assert d.symptom in SYMPTOMS + (INCONCLUSIVE,)
        d.check()
    listed = [r["transformation_id"] for r in iter_jsonl(c.dir / "diagnoses.jsonl")]
    assert sorted(listed) == sorted(undetected)
    return len(finals)


@pytest.mark.slow
@pytest.mark.criterion(9, "symptom partition over all fixtures and 200 random variants")
def test_symptom_partition(tmp_path):
    classified = 0
    for name in ALL_FIXTURES:
        root = copy_fixture(tmp_path / "fixtures", name)
        c = Campaign(load_campaign_config(root, runs=3))
        c.discover()
        c.diagnose()
        classified += _check_partition(c)

    rng = random.Random(20261015)
    done = draws = 0
    while done < 200:
        draws += 1
        assert draws < 1000, "too many variants with a red suite"
        dest = tmp_path / "variants" / "v"
        make_variant(dest, rng)
        c = Campaign(load_campaign_config(dest, runs=1, runner="fork", out=tmp_path / "variants" / "out"))
        try:
            c.discover()
        except CampaignError:
            continue
        c.diagnose()
        classified += _check_partition(c)
        done += 1
    assert classified > 200


def _artifacts(report_dir: Path) -> dict:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(report_dir.iterdir())}


@pytest.mark.criterion(10, "report determinism: byte-identical artifacts")
def test_report_determinism(versioned_set_campaign, capsys):
    c = versioned_set_campaign.campaign
    args = ["report", str(c.root)]
    assert cli.main(args) == 0
    first = _artifacts(c.report_dir)
    assert cli.main(args) == 0
    second = _artifacts(c.report_dir)
    assert first == second
    assert {"report.md", "suggestions.jsonl", "summary.json", "distances.tsv"} <= set(first)
    assert json.loads((c.report_dir / "summary.json").read_text())["undetected"] == 4
