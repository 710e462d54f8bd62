"""Subject project adapter: methods, tests, runs and per-test coverage."""
from __future__ import annotations

import ast
import fnmatch
import hashlib
import json
import logging
import tempfile
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable

from riptide.config import ExecutionConfig
from riptide.runner import TestRunReport, execute
from riptide.store import iter_jsonl

log = logging.getLogger(__name__)

RETURN_CATEGORIES = (
    "void", "boolean", "integer", "float", "character", "string", "reference", "array",
)
SKIP_DIRS = {".git", ".hg", ".svn", "__pycache__", ".riptide", ".pytest_cache", ".tox",
             ".venv", "venv", "env", "build", "dist", "node_modules", ".mypy_cache", ".eggs"}
NON_SUBJECT_FILES = {"conftest.py", "setup.py", "noxfile.py"}


class UnknownTestError(KeyError):
    pass


class CoverageError(RuntimeError):
    pass


@dataclass(frozen=True)
class ParseError:
    file: str
    message: str


@dataclass(frozen=True)
class MethodDescriptor:
    id: str
    file: str
    qualname: str
    name: str
    params: tuple[str, ...]
    span: tuple[int, int, int, int]
    body_span: tuple[int, int, int, int] | None
    body_digest: str
    first_line: int
    def_line: int
    return_category: str | None
    is_static: bool
    visibility: str
    declaring_scope: str
    is_generator: bool = False
    is_async: bool = False
    is_constructor: bool = False
    annotation: str | None = None

    @property
    def externally_invokable(self) -> bool:
        return self.visibility == "externally-invokable"

    @property
    def class_name(self) -> str | None:
        parts = self.qualname.split(".")
        return parts[-2] if len(parts) > 1 else None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MethodDescriptor":
        d = dict(d)
        d["params"] = tuple(d["params"])
        d["span"] = tuple(d["span"])
        if d.get("body_span") is not None:
            d["body_span"] = tuple(d["body_span"])
        return cls(**d)


@dataclass(frozen=True)
class TestCase:
    __test__ = False  # not a pytest test class

    id: str
    file: str
    name: str
    class_name: str | None
    span: tuple[int, int, int, int]
    suite_status_on_original: str = "unknown"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TestCase":
        d = dict(d)
        d["span"] = tuple(d["span"])
        return cls(**d)


@dataclass
class CoverageMap:
    entries: dict[str, frozenset[str]] = field(default_factory=dict)

    def tests_for(self, method_id: str) -> frozenset[str]:
        return self.entries.get(method_id, frozenset())

    def to_dict(self) -> dict:
        return {m: sorted(ts) for m, ts in sorted(self.entries.items())}

    @classmethod
    def from_dict(cls, d: dict) -> "CoverageMap":
        return cls({m: frozenset(ts) for m, ts in d.items()})


@dataclass
class SuiteTrace:
    """Everything one traced run of the suite reveals."""

    report: TestRunReport
    coverage: CoverageMap
    distances: dict[tuple[str, str], int] = field(default_factory=dict)
    chains: dict[tuple[str, str], list[str]] = field(default_factory=dict)
    return_kinds: dict[str, frozenset[str]] = field(default_factory=dict)


# --------------------------------------------------------------------------- sources


class SourceText:
    """Source file with conversions between AST positions and text offsets."""

    def __init__(self, text: str):
        self.text = text
        self.lines = text.splitlines(keepends=True)
        self._starts = [0]
        for ln in self.lines:
            self._starts.append(self._starts[-1] + len(ln))

    def char_col(self, line: int, byte_col: int) -> int:
        if line - 1 >= len(self.lines):
            return 0
        return len(self.lines[line - 1].encode("utf-8")[:byte_col].decode("utf-8", "replace"))

    def offset(self, line: int, char_col: int) -> int:
        return self._starts[line - 1] + char_col

    def node_span(self, node: ast.AST) -> tuple[int, int, int, int]:
        return (
            node.lineno,
            self.char_col(node.lineno, node.col_offset),
            node.end_lineno,
            self.char_col(node.end_lineno, node.end_col_offset),
        )

    def slice(self, span: tuple[int, int, int, int]) -> str:
        a = self.offset(span[0], span[1])
        b = self.offset(span[2], span[3])
        return self.text[a:b]


def digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def _excluded(rel: str, globs: Iterable[str]) -> bool:
    return any(fnmatch.fnmatch(rel, g) or fnmatch.fnmatch(rel, g.rstrip("/") + "/*") for g in globs)


def is_test_file(rel: str) -> bool:
    name = rel.rsplit("/", 1)[-1]
    return name.startswith("test_") or name.endswith("_test.py")


def python_files(root: Path, exclude: Iterable[str] = ()) -> list[str]:
    """Relative POSIX paths of Python files under *root*, sorted."""
    root = Path(root)
    exclude = tuple(exclude)
    out = []
    for p in root.rglob("*.py"):
        rel = p.relative_to(root).as_posix()
        parts = rel.split("/")
        if any(part in SKIP_DIRS or part.endswith(".egg-info") for part in parts[:-1]):
            continue
        if _excluded(rel, exclude):
            continue
        out.append(rel)
    return sorted(out)


def source_tree_digest(root: Path, exclude: Iterable[str] = (), extra: Iterable[str] = ()) -> str:
    h = hashlib.sha256()
    for rel in python_files(root, exclude) + [e for e in extra if (Path(root) / e).is_file()]:
        h.update(rel.encode())
        h.update(b"\0")
        h.update((Path(root) / rel).read_bytes())
        h.update(b"\0")
    return h.hexdigest()


# --------------------------------------------------------------------------- methods


def _has_yield(fn: ast.AST) -> bool:
    for node in _own_nodes(fn):
        if isinstance(node, (ast.Yield, ast.YieldFrom)):
            return True
    return False


def _own_nodes(fn: ast.AST):
    """Walk a function body without entering nested scopes."""
    stack = list(ast.iter_child_nodes(fn))
    while stack:
        node = stack.pop()
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef, ast.Lambda)):
            continue
        yield node
        stack.extend(ast.iter_child_nodes(node))


def returns_value(fn: ast.AST) -> bool:
    for node in _own_nodes(fn):
        if isinstance(node, ast.Return) and node.value is not None:
            if not (isinstance(node.value, ast.Constant) and node.value.value is None):
                return True
    return False


_ANNOTATION_CATEGORIES = {
    "None": "void", "NoReturn": "void", "bool": "boolean", "int": "integer", "float": "float",
    "str": "string", "list": "array", "tuple": "array", "List": "array", "Tuple": "array",
    "Sequence": "array", "char": "character",
}


def category_from_annotation(text: str) -> str:
    head = text.split("[", 1)[0].strip().rsplit(".", 1)[-1]
    if "|" in text or head in ("Optional", "Union"):
        return "reference"
    return _ANNOTATION_CATEGORIES.get(head, "reference")


def category_from_kinds(kinds: Iterable[str]) -> str | None:
    """Return category implied by observed return kinds; ``None`` if polymorphic."""
    kinds = set(kinds)
    nullable = "none" in kinds
    kinds.discard("none")
    if not kinds:
        return "reference" if nullable else None
    if kinds == {"integer", "float"}:
        kinds = {"float"}
    if len(kinds) > 1:
        return None
    (k,) = kinds
    return "reference" if nullable else k


def _body_span(src: SourceText, fn: ast.AST) -> tuple[int, int, int, int] | None:
    body = list(fn.body)
    if body and isinstance(body[0], ast.Expr) and isinstance(body[0].value, ast.Constant) \
            and isinstance(body[0].value.value, str):
        body = body[1:]
    if not body or all(isinstance(s, ast.Pass) for s in body):
        return None
    if len(body) == 1 and isinstance(body[0], ast.Expr) and isinstance(body[0].value, ast.Constant) \
            and body[0].value.value is Ellipsis:
        return None
    a = src.node_span(body[0])
    b = src.node_span(body[-1])
    return (a[0], a[1], b[2], b[3])


def _is_private(name: str) -> bool:
    return name.startswith("_") and not (name.startswith("__") and name.endswith("__"))


def _decorator_names(fn: ast.AST) -> set[str]:
    out = set()
    for d in fn.decorator_list:
        target = d.func if isinstance(d, ast.Call) else d
        out.add(ast.unparse(target).rsplit(".", 1)[-1])
    return out


def _describe(rel: str, src: SourceText, fn: ast.AST, scope: list[str]) -> MethodDescriptor:
    decorators = _decorator_names(fn)
    in_class = bool(scope)
    is_static = not in_class or bool(decorators & {"staticmethod", "classmethod"})
    args = fn.args
    positional = [a.arg for a in args.posonlyargs + args.args]
    if in_class and "staticmethod" not in decorators and positional:
        positional = positional[1:]
    params = positional[:]
    if args.vararg:
        params.append("*" + args.vararg.arg)
    params += [a.arg for a in args.kwonlyargs]
    if args.kwarg:
        params.append("**" + args.kwarg.arg)
    qualname = ".".join(scope + [fn.name])
    first = min([d.lineno for d in fn.decorator_list] + [fn.lineno])
    span = (first, 0, fn.end_lineno, src.char_col(fn.end_lineno, fn.end_col_offset))
    body_span = _body_span(src, fn)
    annotation = ast.unparse(fn.returns) if fn.returns is not None else None
    is_gen = _has_yield(fn)
    if annotation is not None:
        category = category_from_annotation(annotation)
    elif not returns_value(fn) and not is_gen:
        category = "void"
    else:
        category = None
    private = _is_private(fn.name) or any(_is_private(c) for c in scope)
    return MethodDescriptor(
        id=f"{rel}::{qualname}({', '.join(params)})",
        file=rel,
        qualname=qualname,
        name=fn.name,
        params=tuple(params),
        span=span,
        body_span=body_span,
        body_digest=digest(src.slice(body_span)) if body_span else "",
        first_line=first,
        def_line=fn.lineno,
        return_category=category,
        is_static=is_static,
        visibility="internal-only" if private else "externally-invokable",
        declaring_scope=".".join([rel[:-3].replace("/", ".")] + scope),
        is_generator=is_gen,
        is_async=isinstance(fn, ast.AsyncFunctionDef),
        is_constructor=in_class and fn.name in ("__init__", "__new__"),
        annotation=annotation,
    )


def _walk_definitions(body, scope):
    for node in body:
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            yield node, scope
        elif isinstance(node, ast.ClassDef):
            yield from _walk_definitions(node.body, scope + [node.name])


def methods_in_source(rel: str, text: str) -> list[MethodDescriptor]:
    tree = ast.parse(text, filename=rel)
    src = SourceText(text)
    return [_describe(rel, src, fn, scope) for fn, scope in _walk_definitions(tree.body, [])]


def discover_methods(
    project_root: Path, exclude: Iterable[str] = (), errors: list[ParseError] | None = None
) -> list[MethodDescriptor]:
    """All non-test functions and methods with a parseable body, sorted by id.

    Files that fail to parse are skipped; a :class:`ParseError` is appended to
    *errors* when a list is supplied.
    """
    root = Path(project_root)
    out: list[MethodDescriptor] = []
    for rel in python_files(root, exclude):
        if is_test_file(rel) or rel.rsplit("/", 1)[-1] in NON_SUBJECT_FILES:
            continue
        try:
            text = (root / rel).read_text(encoding="utf-8")
            out.extend(methods_in_source(rel, text))
        except (SyntaxError, UnicodeDecodeError, ValueError) as exc:
            log.warning("cannot parse %s: %s", rel, exc)
            if errors is not None:
                errors.append(ParseError(rel, str(exc)))
    out.sort(key=lambda m: m.id)
    return out


# --------------------------------------------------------------------------- tests


def _is_parametrized(fn: ast.AST) -> bool:
    return any("parametrize" in ast.unparse(d) for d in fn.decorator_list)


def _is_generic_class(cls: ast.ClassDef) -> bool:
    return any(isinstance(b, ast.Subscript) for b in cls.bases) or bool(getattr(cls, "type_params", None))


def tests_in_source(rel: str, text: str) -> list[TestCase]:
    tree = ast.parse(text, filename=rel)
    src = SourceText(text)
    found = []

    def add(fn, cls_name):
        if isinstance(fn, ast.AsyncFunctionDef) or _is_parametrized(fn) or _has_yield(fn):
            return
        nodeid = f"{rel}::{cls_name}::{fn.name}" if cls_name else f"{rel}::{fn.name}"
        first = min([d.lineno for d in fn.decorator_list] + [fn.lineno])
        found.append(TestCase(nodeid, rel, fn.name, cls_name,
                              (first, 0, fn.end_lineno, src.char_col(fn.end_lineno, fn.end_col_offset))))

    for node in tree.body:
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)) and node.name.startswith("test"):
            add(node, None)
        elif isinstance(node, ast.ClassDef):
            unittest_like = any(ast.unparse(b).endswith("TestCase") for b in node.bases)
            if not (node.name.startswith("Test") or unittest_like) or _is_generic_class(node):
                continue
            if not unittest_like and any(
                isinstance(s, ast.FunctionDef) and s.name == "__init__" for s in node.body
            ):
                continue
            for s in node.body:
                if isinstance(s, (ast.FunctionDef, ast.AsyncFunctionDef)) and s.name.startswith("test"):
                    add(s, node.name)
    return found


def discover_tests(project_root: Path, exclude: Iterable[str] = ()) -> list[TestCase]:
    root = Path(project_root)
    out = []
    for rel in python_files(root, exclude):
        if not is_test_file(rel):
            continue
        try:
            out.extend(tests_in_source(rel, (root / rel).read_text(encoding="utf-8")))
        except (SyntaxError, UnicodeDecodeError, ValueError) as exc:
            log.warning("cannot parse test file %s: %s", rel, exc)
    out.sort(key=lambda t: t.id)
    return out


# --------------------------------------------------------------------------- runs


def run_tests(
    project_root: Path,
    filter: Iterable[str] | None = None,
    environment: ExecutionConfig | None = None,
    *,
    known_tests: Iterable[str] | None = None,
) -> TestRunReport:
    """Run the suite, or only the test ids in *filter*, in a fresh process."""
    environment = environment or ExecutionConfig()
    if filter is not None:
        filter = set(filter)
        known = set(known_tests) if known_tests is not None else {
            t.id for t in discover_tests(project_root, environment.exclude)
        }
        unknown = sorted(filter - known)
        if unknown:
            raise UnknownTestError(f"unknown test id: {', '.join(unknown)}")
    return execute(project_root, filter, environment)


def method_index(project_root: Path, methods: Iterable[MethodDescriptor]) -> list[dict]:
    root = Path(project_root).resolve()
    return [
        {"id": m.id, "file": str(root / m.file), "name": m.name,
         "lines": sorted({m.first_line, m.def_line})}
        for m in methods
    ]


def trace_suite(
    project_root: Path,
    methods: list[MethodDescriptor],
    environment: ExecutionConfig | None = None,
    tests: Iterable[str] | None = None,
) -> SuiteTrace:
    """Run the suite once with the call profiler attached."""
    environment = environment or ExecutionConfig()
    with tempfile.TemporaryDirectory(prefix="riptide-trace-") as tmp:
        index_path = Path(tmp) / "methods.json"
        trace_path = Path(tmp) / "trace.jsonl"
        index_path.write_text(json.dumps(method_index(project_root, methods)), encoding="utf-8")
        report = execute(project_root, tests, environment,
                         env={"RIPTIDE_TRACE": str(trace_path), "RIPTIDE_METHODS": str(index_path)})
        entries: dict[str, set[str]] = {}
        distances: dict[tuple[str, str], int] = {}
        chains: dict[tuple[str, str], list[str]] = {}
        kinds: dict[str, set[str]] = {}
        if trace_path.exists():
            for rec in iter_jsonl(trace_path):
                if "return_kinds" in rec:
                    kinds.setdefault(rec["method_id"], set()).update(rec["return_kinds"])
                    continue
                key = (rec["method_id"], rec["test_id"])
                entries.setdefault(rec["method_id"], set()).add(rec["test_id"])
                if rec["distance"] is not None and (key not in distances or rec["distance"] < distances[key]):
                    distances[key] = rec["distance"]
                    chains[key] = rec["chain"]
    if not report.complete and not entries:
        raise CoverageError(f"coverage collection failed: {report.diagnostic}")
    return SuiteTrace(
        report=report,
        coverage=CoverageMap({m: frozenset(ts) for m, ts in entries.items()}),
        distances=distances,
        chains=chains,
        return_kinds={m: frozenset(k) for m, k in kinds.items()},
    )


def compute_coverage(
    project_root: Path,
    methods: list[MethodDescriptor] | None = None,
    environment: ExecutionConfig | None = None,
) -> CoverageMap:
    """Map each method to the passing tests that enter its body."""
    environment = environment or ExecutionConfig()
    if methods is None:
        methods = discover_methods(project_root, environment.exclude)
    trace = trace_suite(project_root, methods, environment)
    passing = trace.report.passing()
    cov = {m: frozenset(ts & passing) for m, ts in trace.coverage.entries.items()}
    return CoverageMap({m: ts for m, ts in cov.items() if ts})


def resolve_categories(
    methods: list[MethodDescriptor], return_kinds: dict[str, Iterable[str]]
) -> tuple[list[MethodDescriptor], dict[str, str]]:
    """Fill in dynamically inferred return categories.

    Returns the updated descriptors and a ``{method_id: reason}`` map for
    methods whose category could not be settled.
    """
    out, unresolved = [], {}
    for m in methods:
        if m.return_category is None:
            kinds = return_kinds.get(m.id)
            if kinds is None:
                unresolved[m.id] = "unsupported return type"
            else:
                cat = category_from_kinds(kinds)
                if cat is None:
                    unresolved[m.id] = "polymorphic return"
                else:
                    m = replace(m, return_category=cat)
        out.append(m)
    return out, unresolved
