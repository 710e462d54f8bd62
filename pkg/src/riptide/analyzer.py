"""Reach-infection-propagation diagnosis of undetected transformations.

Stage 1 compares the local state of the transformed method (receiver,
arguments, result) at each of its exits against the original. Stage 2, run
only for infected transformations, compares the values of every expression
in the covering tests. Each undetected transformation ends up with exactly
one symptom, or is reported inconclusive with a reason.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from riptide.config import ExecutionConfig
from riptide.instrument import ExpressionSite, InstrumentationError, instrument_method, instrument_tests
from riptide.observation import InvariantState, Key, StateDiff, get_diff, observe
from riptide.project import CoverageMap, MethodDescriptor, TestCase
from riptide.transform import ExtremeTransformation, SourceDrift, Workspace, apply_transformation, compiles

log = logging.getLogger(__name__)

NO_INFECTION = "no-infection"
NO_PROPAGATION = "no-propagation"
WEAK_ORACLE = "weak-oracle"
INCONCLUSIVE = "inconclusive"
SYMPTOMS = (NO_INFECTION, NO_PROPAGATION, WEAK_ORACLE)
ABBREVIATIONS = {NO_INFECTION: "ni", NO_PROPAGATION: "np", WEAK_ORACLE: "wo", INCONCLUSIVE: "inconclusive"}

GUARD_SUFFIX = ":raised"
GUARD_DEPTH = 999  # ranks the body guard after every real expression site


@dataclass
class SymptomDiagnosis:
    transformation_id: str
    symptom: str
    method_diff: StateDiff = field(default_factory=StateDiff)
    test_diff: StateDiff = field(default_factory=StateDiff)
    covering_tests: tuple[str, ...] = ()
    diagnostic: str = ""
    flags: tuple[str, ...] = ()
    excluded_tests: tuple[str, ...] = ()
    context: dict = field(default_factory=dict)

    def check(self) -> None:
        """Raise ``AssertionError`` if the symptom contradicts the evidence."""
        s = self.symptom
        assert s in SYMPTOMS or s == INCONCLUSIVE, s
        if s == INCONCLUSIVE:
            return
        assert (s == NO_INFECTION) == (not self.method_diff), "no-infection iff empty method diff"
        assert (s == WEAK_ORACLE) == bool(self.test_diff), "weak-oracle iff nonempty test diff"
        assert (s == NO_PROPAGATION) == (bool(self.method_diff) and not self.test_diff)
        for diff in (self.method_diff, self.test_diff):
            for e in diff.entries:
                assert e.original != e.transformed, e

    def to_record(self) -> dict:
        return {
            "transformation_id": self.transformation_id,
            "symptom": self.symptom,
            "method_diff": self.method_diff.to_dict(),
            "test_diff": self.test_diff.to_dict(),
            "covering_tests": list(self.covering_tests),
            "diagnostic": self.diagnostic,
            "flags": list(self.flags),
            "excluded_tests": list(self.excluded_tests),
            "context": self.context,
        }

    @classmethod
    def from_record(cls, r: Mapping) -> "SymptomDiagnosis":
        return cls(
            r["transformation_id"], r["symptom"], StateDiff.from_dict(r["method_diff"]),
            StateDiff.from_dict(r["test_diff"]), tuple(r["covering_tests"]), r.get("diagnostic", ""),
            tuple(r.get("flags", ())), tuple(r.get("excluded_tests", ())), dict(r.get("context", {})),
        )


@dataclass
class Infection:
    transformation: ExtremeTransformation
    method_diff: StateDiff
    tests: tuple[str, ...]
    excluded: tuple[str, ...] = ()


def _restrict(state: InvariantState, tests: set[str]) -> dict:
    return {k: v for k, v in state.values.items() if k.test_id in tests}


def _sensitive(state: InvariantState) -> set[str]:
    return state.failing_tests()


class Analyzer:
    """Runs both dynamic stages inside a private workspace.

    Observations of the original program are cached per method and test set
    (stage 1) and per test set (stage 2), so several transformations of the
    same method share them.
    """

    def __init__(
        self,
        workspace: Workspace,
        methods: Mapping[str, MethodDescriptor],
        tests: Mapping[str, TestCase],
        coverage: CoverageMap,
        environment: ExecutionConfig,
        runs: int = 10,
        *,
        on_observe=None,
    ):
        self.workspace = workspace
        self.methods = dict(methods)
        self.tests = dict(tests)
        self.coverage = coverage
        self.environment = environment
        self.runs = runs
        self.on_observe = on_observe
        self._stage1_original: dict[tuple[str, tuple[str, ...]], InvariantState] = {}
        self._stage2_original: dict[tuple[str, ...], InvariantState] = {}
        self._test_sources: dict[tuple[str, ...], dict[str, str]] = {}
        self.observations: dict[str, InvariantState] = {}
        self.sites: dict[str, ExpressionSite] = {}

    # -- helpers -------------------------------------------------------------
    def _observe(self, label: str, files: dict[str, str], tests: tuple[str, ...]) -> InvariantState:
        with self.workspace.patched(files) as root:
            state = observe(root, tests, self.runs, self.environment)
        self.observations[label] = state
        if self.on_observe:
            self.on_observe(label, state)
        return state

    def _instrumented_tests(self, tests: tuple[str, ...]) -> dict[str, str]:
        if tests not in self._test_sources:
            by_file: dict[str, list[TestCase]] = {}
            for tid in tests:
                tc = self.tests.get(tid)
                if tc is None:
                    raise InstrumentationError(f"unknown covering test {tid}")
                by_file.setdefault(tc.file, []).append(tc)
            out = {}
            for rel, tcs in sorted(by_file.items()):
                text, sites = instrument_tests(self.workspace.read(rel), tcs)
                out[rel] = text
                for s in sites:
                    self.sites[s.site_id] = s
            self._test_sources[tests] = out
        return self._test_sources[tests]

    def _transformed_text(self, t: ExtremeTransformation, m: MethodDescriptor) -> str:
        text = apply_transformation(self.workspace.read(m.file), m, t)
        problem = compiles(text, m.file)
        if problem:
            raise SourceDrift(problem)
        return text

    # -- stage 1 -------------------------------------------------------------
    def infect(self, t: ExtremeTransformation) -> SymptomDiagnosis | Infection:
        m = self.methods[t.method]
        tests = tuple(sorted(self.coverage.tests_for(m.id)))
        if not tests:
            return SymptomDiagnosis(t.id, INCONCLUSIVE, diagnostic="reach violated: no covering tests")
        try:
            original_text = self.workspace.read(m.file)
            key = (m.id, tests)
            if key not in self._stage1_original:
                self._stage1_original[key] = self._observe(
                    f"stage1-original:{m.id}", {m.file: instrument_method(original_text, m)}, tests)
            original = self._stage1_original[key]
            transformed = self._observe(
                f"stage1:{t.id}", {m.file: instrument_method(self._transformed_text(t, m), m)}, tests)
        except (SourceDrift, InstrumentationError, SyntaxError) as exc:
            return SymptomDiagnosis(t.id, INCONCLUSIVE, covering_tests=tests, diagnostic=str(exc))
        return self._judge_stage1(t, tests, original, transformed)

    def _judge_stage1(self, t, tests, original, transformed) -> SymptomDiagnosis | Infection:
        for state in (original, transformed):
            if state.degraded:
                return SymptomDiagnosis(t.id, INCONCLUSIVE, covering_tests=tests,
                                        diagnostic=f"degraded observation: {state.diagnostic}")
        excluded = _sensitive(original)
        usable = set(tests) - excluded
        newly_failing = sorted(transformed.failing_tests() & usable)
        if newly_failing:
            return SymptomDiagnosis(
                t.id, INCONCLUSIVE, covering_tests=tests, flags=("instrumentation-detected",),
                excluded_tests=tuple(sorted(excluded)),
                diagnostic="covering tests fail under instrumentation only: " + ", ".join(newly_failing))
        if not usable:
            return SymptomDiagnosis(t.id, INCONCLUSIVE, covering_tests=tests,
                                    excluded_tests=tuple(sorted(excluded)),
                                    diagnostic="all covering tests are instrumentation-sensitive")
        diff = get_diff(_restrict(original, usable), _restrict(transformed, usable))
        if not diff:
            return SymptomDiagnosis(t.id, NO_INFECTION, method_diff=diff, covering_tests=tests,
                                    excluded_tests=tuple(sorted(excluded)))
        return Infection(t, diff, tests, tuple(sorted(excluded)))

    # -- stage 2 -------------------------------------------------------------
    def propagate(self, inf: Infection) -> SymptomDiagnosis:
        t = inf.transformation
        if not inf.method_diff:
            raise ValueError("stage 2 requires an infection")
        m = self.methods[t.method]
        opaque = tuple(x for x in inf.tests if x not in self.tests)
        tests = tuple(x for x in inf.tests if x in self.tests)
        if not tests:
            return SymptomDiagnosis(t.id, INCONCLUSIVE, method_diff=inf.method_diff, covering_tests=inf.tests,
                                    diagnostic="no covering test can be instrumented: " + ", ".join(opaque))
        try:
            test_files = self._instrumented_tests(tests)
            if m.file in test_files:
                raise InstrumentationError(f"{m.file} holds both the method and its tests")
            if tests not in self._stage2_original:
                self._stage2_original[tests] = self._observe(
                    f"stage2-original:{'|'.join(tests)}", dict(test_files), tests)
            original = self._stage2_original[tests]
            files = dict(test_files)
            files[m.file] = self._transformed_text(t, m)
            transformed = self._observe(f"stage2:{t.id}", files, tests)
        except (SourceDrift, InstrumentationError, SyntaxError) as exc:
            return SymptomDiagnosis(t.id, INCONCLUSIVE, method_diff=inf.method_diff, covering_tests=inf.tests,
                                    diagnostic=str(exc))
        for state in (original, transformed):
            if state.degraded:
                return SymptomDiagnosis(t.id, INCONCLUSIVE, method_diff=inf.method_diff, covering_tests=inf.tests,
                                        diagnostic=f"degraded observation: {state.diagnostic}")
        excluded = set(inf.excluded) | _sensitive(original) | set(opaque)
        usable = set(tests) - excluded
        newly_failing = sorted(transformed.failing_tests() & usable)
        if newly_failing:
            return SymptomDiagnosis(
                t.id, INCONCLUSIVE, method_diff=inf.method_diff, covering_tests=inf.tests,
                flags=("instrumentation-detected",), excluded_tests=tuple(sorted(excluded)),
                diagnostic="covering tests fail under instrumentation only: " + ", ".join(newly_failing))
        if not usable:
            return SymptomDiagnosis(t.id, INCONCLUSIVE, method_diff=inf.method_diff, covering_tests=inf.tests,
                                    excluded_tests=tuple(sorted(excluded)),
                                    diagnostic="all covering tests are instrumentation-sensitive")
        diff = get_diff(_restrict(original, usable), _restrict(transformed, usable))
        flags = ("exception-difference",) if any(e.key.point_id.endswith(GUARD_SUFFIX) for e in diff.entries) else ()
        symptom = WEAK_ORACLE if diff else NO_PROPAGATION
        return SymptomDiagnosis(t.id, symptom, method_diff=inf.method_diff, test_diff=diff,
                                covering_tests=inf.tests, flags=flags, excluded_tests=tuple(sorted(excluded)),
                                context=self._site_context(diff, original))

    def _site_context(self, diff: StateDiff, original: InvariantState) -> dict:
        """Position, call depth and owning type of every differing test site."""
        sites = {}
        for e in diff.entries:
            k = e.key
            if k.point_id in sites:
                continue
            s = self.sites.get(k.point_id)
            owner = original.kinds.get(Key(k.test_id, k.point_id, k.invocation_index, "null"), "")
            if s is None:  # the guard around the test body
                sites[k.point_id] = {"test_id": k.test_id, "depth": GUARD_DEPTH, "line": 0, "col": 0,
                                     "end_line": 0, "end_col": 0, "text": "<raised exception>",
                                     "file": k.point_id.split(":", 1)[0], "owner_kind": owner}
                continue
            sites[k.point_id] = {"test_id": s.test_id, "depth": s.depth, "line": s.line, "col": s.col,
                                 "end_line": s.end_line, "end_col": s.end_col, "text": s.text,
                                 "file": s.file, "owner_kind": owner}
        return {"sites": sites}

    # -- whole pipeline ------------------------------------------------------
    def diagnose(self, t: ExtremeTransformation, stage: str = "all") -> SymptomDiagnosis | Infection:
        """Diagnose one undetected transformation.

        With ``stage="infection"`` infected transformations are returned as
        :class:`Infection` without running stage 2.
        """
        try:
            first = self.infect(t)
            if isinstance(first, SymptomDiagnosis) or stage == "infection":
                return first
            return self.propagate(first)
        except Exception as exc:  # one bad transformation never sinks the campaign
            log.exception("diagnosis of %s failed", t.id)
            return SymptomDiagnosis(t.id, INCONCLUSIVE, diagnostic=f"internal error: {type(exc).__name__}: {exc}")


def find_infections(
    analyzer: Analyzer, undetected: Iterable[ExtremeTransformation]
) -> tuple[list[SymptomDiagnosis], list[Infection], list[SymptomDiagnosis]]:
    """Split into no-infection diagnoses, infections and inconclusives."""
    ni, infected, inconclusive = [], [], []
    for t in undetected:
        r = analyzer.diagnose(t, stage="infection")
        if isinstance(r, Infection):
            infected.append(r)
        elif r.symptom == INCONCLUSIVE:
            inconclusive.append(r)
        else:
            ni.append(r)
    return ni, infected, inconclusive


def find_propagations(
    analyzer: Analyzer, infections: Iterable[Infection]
) -> tuple[list[SymptomDiagnosis], list[SymptomDiagnosis], list[SymptomDiagnosis]]:
    """Split infections into no-propagation, weak-oracle and inconclusive diagnoses."""
    np_, wo, inconclusive = [], [], []
    for inf in infections:
        d = analyzer.propagate(inf)
        {NO_PROPAGATION: np_, WEAK_ORACLE: wo}.get(d.symptom, inconclusive).append(d)
    return np_, wo, inconclusive


def classify(analyzer: Analyzer, undetected: Iterable[ExtremeTransformation]) -> list[SymptomDiagnosis]:
    """One diagnosis per undetected transformation, in input order."""
    out = []
    for t in undetected:
        d = analyzer.diagnose(t)
        d.check()
        out.append(d)
    return out
