"""Campaign orchestration: discover, diagnose and report over persisted evidence.

Every artifact of a campaign lives in ``<out>/<key>/`` where the key hashes
the source tree together with the result-affecting configuration, so a
changed project never reuses stale evidence. Stages talk to each other only
through files in that directory, each written atomically.
"""
from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence, TypeVar

from riptide.analytics import CampaignSummary, summarize
from riptide.analyzer import INCONCLUSIVE, Analyzer, Infection, SymptomDiagnosis
from riptide.config import CampaignConfig
from riptide.observation import InvariantState, StateDiff
from riptide.project import (
    CoverageError, CoverageMap, MethodDescriptor, ParseError, TestCase, discover_methods, discover_tests,
    resolve_categories, source_tree_digest, trace_suite, _excluded,
)
from riptide.runner import FAILING, TestRunReport, execute
from riptide.static import ReachViolated, build_call_graph, measure_stack_distance
from riptide.store import iter_jsonl, read_json, write_json, write_jsonl, write_text
from riptide.suggest import Report, render_report, suggest
from riptide.transform import (
    ExtremeTransformation, Skip, Workspace, detect, enumerate_transformations, filter_trivial_methods,
)

log = logging.getLogger(__name__)

VERIFICATION_RUNS = 3
CONFIG_FILES = ("riptide.cfg", "pytest.ini", "setup.cfg", "tox.ini", "pyproject.toml")
T = TypeVar("T")


class CampaignError(RuntimeError):
    """The subject project cannot be analysed (exit status 2)."""

    exit_code = 2


class PrerequisiteError(CampaignError):
    """An earlier stage has not produced its artifacts yet (exit status 1)."""

    exit_code = 1


def campaign_key(config: CampaignConfig) -> str:
    sources = source_tree_digest(config.project_root, extra=CONFIG_FILES)
    blob = json.dumps({"sources": sources, "config": config.fingerprint()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _parallel(groups: Sequence[T], fn: Callable[[T], None], workers: int) -> None:
    if workers <= 1 or len(groups) <= 1:
        for g in groups:
            fn(g)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for f in [pool.submit(fn, g) for g in groups]:
            f.result()


def _split(items: Sequence[T], key: Callable[[T], str], workers: int) -> list[list[T]]:
    """Distribute items over at most *workers* buckets, keeping equal keys together."""
    by_key: dict[str, list[T]] = {}
    for it in items:
        by_key.setdefault(key(it), []).append(it)
    buckets: list[list[T]] = [[] for _ in range(max(1, min(workers, len(by_key))))]
    for i, k in enumerate(sorted(by_key)):
        buckets[i % len(buckets)].extend(by_key[k])
    return [b for b in buckets if b]


@dataclass
class Discovery:
    methods: dict[str, MethodDescriptor]
    tests: dict[str, TestCase]
    coverage: CoverageMap
    transformations: list[ExtremeTransformation]
    skipped: list[Skip]
    distances: dict[tuple[str, str], int] = field(default_factory=dict)
    chains: dict[tuple[str, str], list[str]] = field(default_factory=dict)
    flaky: list[str] = field(default_factory=list)
    parse_errors: list[ParseError] = field(default_factory=list)
    cached: bool = False

    def undetected(self) -> list[ExtremeTransformation]:
        return [t for t in self.transformations if t.detection == "undetected"]


class Campaign:
    def __init__(self, config: CampaignConfig):
        self.config = config
        self.root = config.project_root
        self.key = campaign_key(config)
        self.dir = config.out_dir / self.key

    # -- paths -----------------------------------------------------------------
    @property
    def discover_dir(self) -> Path:
        return self.dir / "discover"

    @property
    def diagnose_dir(self) -> Path:
        return self.dir / "diagnose"

    @property
    def report_dir(self) -> Path:
        return self.dir / "report"

    def _workspace(self) -> Workspace:
        ignore = []
        try:
            rel = self.config.out_dir.resolve().relative_to(self.root)
            ignore.append(rel.parts[0])
        except ValueError:
            pass
        return Workspace(self.root, ignore)

    def _execute(self, root, tests, **kw) -> TestRunReport:
        return execute(root, tests, self.config.execution, **kw)

    # -- discover --------------------------------------------------------------
    def discover(self) -> Discovery:
        if (self.discover_dir / "done.json").exists():
            d = self.load_discovery()
            d.cached = True
            return d
        ex = self.config.execution
        errors: list[ParseError] = []
        methods = discover_methods(self.root, ex.exclude, errors)
        if self.config.include:
            methods = [m for m in methods if _excluded(m.file, self.config.include)]
        tests = discover_tests(self.root, ex.exclude)

        runs = [self._execute(self.root, None) for _ in range(VERIFICATION_RUNS)]
        for r in runs:
            if not r.complete:
                raise CampaignError(f"the original test suite could not be run: {r.diagnostic}")
        outcomes: dict[str, set[str]] = {}
        for r in runs:
            for tid, res in r.results.items():
                outcomes.setdefault(tid, set()).add(res.outcome)
        if not outcomes:
            raise CampaignError("the original test suite has no tests")
        red = sorted(t for t, o in outcomes.items() if o <= FAILING)
        if red:
            raise CampaignError("the original test suite is red; fix these tests first: " + ", ".join(red))
        flaky = sorted(t for t, o in outcomes.items() if len(o) > 1)
        for t in flaky:
            log.warning("excluding flaky test %s (outcomes: %s)", t, ", ".join(sorted(outcomes[t])))

        try:
            trace = trace_suite(self.root, methods, ex)
        except CoverageError as exc:
            raise CampaignError(str(exc)) from exc
        stable_pass = {t for t, o in outcomes.items() if o == {"pass"}}
        coverage = CoverageMap({
            m: frozenset(ts & stable_pass & trace.report.passing())
            for m, ts in trace.coverage.entries.items()
            if ts & stable_pass & trace.report.passing()
        })
        methods, unresolved = resolve_categories(methods, trace.return_kinds)
        skipped: list[Skip] = []
        covered = []
        for m in methods:
            if not coverage.tests_for(m.id):
                skipped.append(Skip(m.id, "not covered"))
            else:
                covered.append(m)
        kept, trivial = filter_trivial_methods(covered, self.root)
        skipped.extend(trivial)
        analysable = []
        for m in kept:
            if m.id in unresolved:
                skipped.append(Skip(m.id, unresolved[m.id]))
            else:
                analysable.append(m)
        transformations = enumerate_transformations(analysable, skipped)
        by_id = {m.id: m for m in methods}

        results: dict[str, ExtremeTransformation] = {}

        def run(group: list[ExtremeTransformation]) -> None:
            with self._workspace() as ws:
                for t in group:
                    done, _ = detect(t, coverage, ws, by_id[t.method], ex)
                    results[t.id] = done
                    log.info("%s: %s", t.id, done.detection)

        _parallel(_split(transformations, lambda t: t.method, self.config.workers), run, self.config.workers)
        transformations = [results[t.id] for t in transformations]

        d = self.discover_dir
        write_jsonl(d / "methods.jsonl", [m.to_dict() for m in methods])
        write_jsonl(d / "tests.jsonl", [t.to_dict() for t in tests])
        write_json(d / "coverage.json", coverage.to_dict())
        write_jsonl(d / "trace.jsonl", [
            {"method_id": m, "test_id": t, "distance": dist, "chain": trace.chains.get((m, t), [])}
            for (m, t), dist in sorted(trace.distances.items())
        ])
        write_jsonl(d / "skipped.jsonl", [s.to_record() for s in sorted(skipped, key=lambda s: s.method)])
        write_jsonl(d / "transformations.jsonl", [t.to_record() for t in transformations])
        write_json(d / "baseline.json", {
            "runs": [r.to_records() for r in runs],
            "flaky": flaky,
            "parse_errors": [{"file": e.file, "message": e.message} for e in errors],
        })
        write_json(d / "done.json", {
            "transformations": len(transformations),
            "undetected": sum(t.detection == "undetected" for t in transformations),
            "detected": sum(t.detection == "detected" for t in transformations),
            "unknown": sum(t.detection == "unknown" for t in transformations),
        })
        return self.load_discovery()

    def load_discovery(self) -> Discovery:
        d = self.discover_dir
        if not (d / "done.json").exists():
            raise PrerequisiteError(
                f"no discovery results for this source tree in {self.dir}; run `riptide discover` first")
        methods = {r["id"]: MethodDescriptor.from_dict(r) for r in iter_jsonl(d / "methods.jsonl")}
        tests = {r["id"]: TestCase.from_dict(r) for r in iter_jsonl(d / "tests.jsonl")}
        distances, chains = {}, {}
        for r in iter_jsonl(d / "trace.jsonl"):
            distances[(r["method_id"], r["test_id"])] = r["distance"]
            chains[(r["method_id"], r["test_id"])] = r["chain"]
        baseline = read_json(d / "baseline.json")
        return Discovery(
            methods=methods,
            tests=tests,
            coverage=CoverageMap.from_dict(read_json(d / "coverage.json")),
            transformations=[ExtremeTransformation.from_record(r) for r in iter_jsonl(d / "transformations.jsonl")],
            skipped=[Skip(r["method"], r["reason"]) for r in iter_jsonl(d / "skipped.jsonl")],
            distances=distances,
            chains=chains,
            flaky=baseline["flaky"],
            parse_errors=[ParseError(e["file"], e["message"]) for e in baseline["parse_errors"]],
        )

    # -- diagnose --------------------------------------------------------------
    def _record_path(self, t: ExtremeTransformation) -> Path:
        return self.diagnose_dir / f"{t.key}.json"

    def load_record(self, t: ExtremeTransformation) -> dict | None:
        p = self._record_path(t)
        return read_json(p) if p.exists() else None

    def _evidence_saver(self, t_key: str):
        def save(label: str, state: InvariantState) -> None:
            kind, _, subject = label.partition(":")
            if kind.endswith("-original"):
                name = hashlib.sha1(label.encode()).hexdigest()[:16]
                path = self.dir / "evidence" / "original" / f"{kind}-{name}.jsonl"
            else:
                path = self.dir / "evidence" / t_key / f"{kind}.jsonl"
            state.save(path)
        return save

    def diagnose(self, only: Iterable[str] = (), stage: str | None = None) -> list[SymptomDiagnosis]:
        """Diagnose undetected transformations, skipping those already done.

        Returns the final diagnoses known after this call (all transformations,
        not just the ones processed now).
        """
        disc = self.load_discovery()
        stage = stage or self.config.stage
        only = set(only) or set(self.config.only)
        undetected = disc.undetected()
        if only:
            unknown = only - {t.id for t in disc.transformations}
            if unknown:
                raise PrerequisiteError("unknown transformation id: " + ", ".join(sorted(unknown)))
            undetected = [t for t in undetected if t.id in only]
        todo = []
        for t in undetected:
            rec = self.load_record(t)
            if rec is None:
                if stage != "propagation":
                    todo.append((t, None))
            elif rec["stage"] == "infection" and stage != "infection":
                todo.append((t, rec))
        if stage == "propagation":
            missing = [t.id for t in undetected if self.load_record(t) is None]
            if missing:
                log.warning("no infection evidence yet for %d transformation(s); run the infection stage first",
                            len(missing))

        def run(group: list[tuple[ExtremeTransformation, dict | None]]) -> None:
            with self._workspace() as ws:
                analyzer = Analyzer(ws, disc.methods, disc.tests, disc.coverage, self.config.execution,
                                    self.config.runs)
                for t, partial in group:
                    analyzer.on_observe = self._evidence_saver(t.key)
                    if partial is None:
                        result = analyzer.diagnose(t, stage="infection" if stage == "infection" else "all")
                    else:
                        inf = Infection(t, StateDiff.from_dict(partial["method_diff"]),
                                        tuple(partial["covering_tests"]), tuple(partial["excluded_tests"]))
                        try:
                            result = analyzer.propagate(inf)
                        except Exception as exc:
                            log.exception("propagation stage failed for %s", t.id)
                            result = SymptomDiagnosis(t.id, INCONCLUSIVE, method_diff=inf.method_diff,
                                                      covering_tests=inf.tests,
                                                      diagnostic=f"internal error: {type(exc).__name__}: {exc}")
                    self._save_result(t, result)

        _parallel(_split(todo, lambda x: x[0].method, self.config.workers), run, self.config.workers)
        finals = self.final_diagnoses(disc)
        write_jsonl(self.dir / "diagnoses.jsonl", [
            {"transformation_id": d.transformation_id, "symptom": d.symptom,
             "evidence_path": f"diagnose/{t.key}.json"}
            for t, d in finals
        ])
        return [d for _, d in finals]

    def _save_result(self, t: ExtremeTransformation, result) -> None:
        if isinstance(result, Infection):
            rec = {"stage": "infection", "transformation_id": t.id,
                   "method_diff": result.method_diff.to_dict(),
                   "covering_tests": list(result.tests), "excluded_tests": list(result.excluded)}
        else:
            result.check()
            rec = {"stage": "final", **result.to_record()}
        write_json(self._record_path(t), rec)
        log.info("%s: %s", t.id, rec.get("symptom", "infected (stage 1 only)"))

    def final_diagnoses(self, disc: Discovery | None = None) -> list[tuple[ExtremeTransformation, SymptomDiagnosis]]:
        disc = disc or self.load_discovery()
        out = []
        for t in disc.undetected():
            rec = self.load_record(t)
            if rec is not None and rec["stage"] == "final":
                out.append((t, SymptomDiagnosis.from_record(rec)))
        return out

    # -- report ----------------------------------------------------------------
    def report(self) -> tuple[Report, CampaignSummary]:
        disc = self.load_discovery()
        finals = dict((t.id, d) for t, d in self.final_diagnoses(disc))
        pending = [t.id for t in disc.undetected() if t.id not in finals]
        if pending:
            raise PrerequisiteError(
                f"{len(pending)} undetected transformation(s) have no diagnosis yet; "
                f"run `riptide diagnose` first")
        graph = build_call_graph(self.root, disc.methods.values())
        suggestions, inconclusive, samples = [], [], []
        for t in disc.undetected():
            d = finals[t.id]
            try:
                sample = measure_stack_distance(t.id, t.method, disc.coverage.tests_for(t.method),
                                                disc.distances, disc.chains)
                samples.append(sample)
            except ReachViolated as exc:
                log.warning("%s", exc)
                sample = None
            if d.symptom == INCONCLUSIVE:
                inconclusive.append(d)
                continue
            s = suggest(d, t, graph, disc.methods, sample.chain if sample else ())
            s.check()
            suggestions.append(s)
        summary = summarize(finals.values(), samples, methods=disc.methods, transformations=disc.transformations)
        report = render_report(suggestions, inconclusive, project=self.root.name, summary_lines=summary.lines())
        r = self.report_dir
        write_text(r / "report.md", report.markdown)
        write_text(r / "suggestions.jsonl", report.catalog)
        write_json(r / "summary.json", summary.to_dict())
        write_text(r / "distances.tsv", summary.distances_tsv())
        write_text(r / "callgraph.txt", graph.edge_list())
        return report, summary

