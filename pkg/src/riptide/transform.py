"""Extreme transformations: enumeration, application and detection."""
from __future__ import annotations

import ast
import hashlib
import shutil
import tempfile
from contextlib import contextmanager
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator

from riptide.config import ExecutionConfig
from riptide.project import (
    SKIP_DIRS, CoverageMap, MethodDescriptor, SourceText, digest,
)
from riptide.runner import TestRunReport, execute

# Python literals for each return category, in variant order.
STUBS: dict[str, tuple[str, ...]] = {
    "void": ("void-empty",),
    "reference": ("None",),
    "boolean": ("True", "False"),
    "integer": ("0", "1"),
    "float": ("0.0", "0.1"),
    "character": ("' '", "'A'"),
    "string": ("''", "'A'"),
    "array": ("[]",),
}
VOID = "void-empty"

_SIZE_NAMES = {"size", "len", "__len__", "length", "count"}
_CONTAINS_NAMES = {"contains", "__contains__", "has", "includes"}
_ITER_NAMES = {"__iter__", "iter", "iterator"}
_GETITEM_NAMES = {"__getitem__", "get", "at"}


class SourceDrift(RuntimeError):
    """The method body no longer matches the recorded span."""


@dataclass(frozen=True)
class ExtremeTransformation:
    id: str
    method: str
    stub_value: str
    variant_index: int
    detection: str | None = None
    diagnostic: str = ""

    @property
    def key(self) -> str:
        """Filesystem-safe short name."""
        return hashlib.sha1(self.id.encode()).hexdigest()[:16]

    def to_record(self) -> dict:
        return {"transformation_id": self.id, "method_id": self.method, "stub_value": self.stub_value,
                "variant_index": self.variant_index, "detection": self.detection,
                "diagnostic": self.diagnostic}

    @classmethod
    def from_record(cls, r: dict) -> "ExtremeTransformation":
        return cls(r["transformation_id"], r["method_id"], r["stub_value"], r["variant_index"],
                   r.get("detection"), r.get("diagnostic", ""))


@dataclass(frozen=True)
class Skip:
    method: str
    reason: str

    def to_record(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------- filtering


def find_function(tree: ast.Module, method: MethodDescriptor) -> ast.FunctionDef | ast.AsyncFunctionDef:
    """Locate the definition of *method* by qualified name."""
    body = tree.body
    *scopes, name = method.qualname.split(".")
    for scope in scopes:
        cls = next((n for n in body if isinstance(n, ast.ClassDef) and n.name == scope), None)
        if cls is None:
            raise SourceDrift(f"class {scope} not found for {method.id}")
        body = cls.body
    candidates = [n for n in body if isinstance(n, (ast.FunctionDef, ast.AsyncFunctionDef)) and n.name == name]
    if not candidates:
        raise SourceDrift(f"definition not found for {method.id}")
    exact = [n for n in candidates if n.lineno == method.def_line]
    return (exact or candidates)[-1]


def _strip_docstring(body: list[ast.stmt]) -> list[ast.stmt]:
    if body and isinstance(body[0], ast.Expr) and isinstance(body[0].value, ast.Constant) \
            and isinstance(body[0].value.value, str):
        return body[1:]
    return body


def _self_field(node: ast.AST, receiver: str | None) -> str | None:
    if receiver and isinstance(node, ast.Attribute) and isinstance(node.value, ast.Name) \
            and node.value.id == receiver:
        return node.attr
    return None


def _param_names(fn: ast.AST) -> list[str]:
    a = fn.args
    return [x.arg for x in a.posonlyargs + a.args + a.kwonlyargs]


def classify_trivial(fn: ast.AST, method: MethodDescriptor) -> str | None:
    """Return a skip reason for trivially uninteresting methods, else ``None``."""
    if method.is_constructor:
        return "constructor"
    if method.is_async:
        return "coroutine"
    if method.is_generator:
        return "generator"
    if method.body_span is None:
        return "empty body"
    body = _strip_docstring(list(fn.body))
    if len(body) != 1:
        return None
    stmt = body[0]
    params = _param_names(fn)
    receiver = params[0] if params and not method.is_static else None
    args = params[1:] if receiver else params
    if isinstance(stmt, ast.Return) and stmt.value is not None:
        if _self_field(stmt.value, receiver):
            return "simple getter"
        if _is_delegation(stmt.value, method.name, receiver, args):
            return "delegation"
    if isinstance(stmt, ast.Assign) and len(stmt.targets) == 1 and _self_field(stmt.targets[0], receiver) \
            and isinstance(stmt.value, ast.Name) and stmt.value.id in args:
        return "simple setter"
    if isinstance(stmt, ast.Expr) and _is_delegation(stmt.value, method.name, receiver, args):
        return "delegation"
    return None


def _simple_args(call: ast.Call, args: list[str]) -> bool:
    return all(isinstance(a, (ast.Name, ast.Constant)) for a in call.args) and all(
        isinstance(k.value, (ast.Name, ast.Constant)) for k in call.keywords
    )


def _is_delegation(expr: ast.AST, name: str, receiver: str | None, args: list[str]) -> bool:
    if receiver is None:
        return False
    if isinstance(expr, ast.Call) and isinstance(expr.func, ast.Attribute):
        target = expr.func.value
        if _self_field(target, receiver) and expr.func.attr.strip("_") == name.strip("_"):
            return _simple_args(expr, args)
    if isinstance(expr, ast.Call) and isinstance(expr.func, ast.Name) and len(expr.args) == 1 \
            and _self_field(expr.args[0], receiver):
        if expr.func.id == "len" and name in _SIZE_NAMES:
            return True
        if expr.func.id == "iter" and name in _ITER_NAMES:
            return True
    if isinstance(expr, ast.Compare) and len(expr.ops) == 1 and isinstance(expr.ops[0], ast.In) \
            and name in _CONTAINS_NAMES and _self_field(expr.comparators[0], receiver) \
            and isinstance(expr.left, ast.Name) and expr.left.id in args:
        return True
    if isinstance(expr, ast.Subscript) and name in _GETITEM_NAMES and _self_field(expr.value, receiver) \
            and isinstance(expr.slice, ast.Name) and expr.slice.id in args:
        return True
    return False


def filter_trivial_methods(
    methods: Iterable[MethodDescriptor], sources: dict[str, str] | Path
) -> tuple[list[MethodDescriptor], list[Skip]]:
    """Split *methods* into analysable ones and skipped ones with reasons.

    *sources* is a ``{relative_path: text}`` map or the project root.
    """
    trees: dict[str, ast.Module] = {}
    kept, skipped = [], []
    for m in methods:
        if m.file not in trees:
            text = sources[m.file] if isinstance(sources, dict) else (Path(sources) / m.file).read_text("utf-8")
            trees[m.file] = ast.parse(text)
        reason = classify_trivial(find_function(trees[m.file], m), m)
        if reason:
            skipped.append(Skip(m.id, reason))
        else:
            kept.append(m)
    return kept, skipped


# --------------------------------------------------------------------------- enumeration


def transformation_id(method_id: str, stub: str) -> str:
    return f"{method_id}=>{stub}"


def enumerate_transformations(
    methods: Iterable[MethodDescriptor], skipped: list[Skip] | None = None
) -> list[ExtremeTransformation]:
    out = []
    for m in sorted(methods, key=lambda m: m.id):
        stubs = STUBS.get(m.return_category or "")
        if stubs is None:
            if skipped is not None:
                skipped.append(Skip(m.id, "unsupported return type"))
            continue
        out.extend(
            ExtremeTransformation(transformation_id(m.id, s), m.id, s, i) for i, s in enumerate(stubs)
        )
    return out


def stub_statement(stub: str) -> str:
    return "pass" if stub == VOID else f"return {stub}"


def apply_transformation(text: str, method: MethodDescriptor, t: ExtremeTransformation) -> str:
    """Replace the method body in *text* with the stub statement.

    The docstring, if any, is kept; nothing outside the body span changes.
    """
    if method.body_span is None:
        raise SourceDrift(f"{method.id} has no body to transform")
    src = SourceText(text)
    try:
        current = src.slice(method.body_span)
    except IndexError:
        raise SourceDrift(f"source drift: {method.file} is shorter than the recorded span") from None
    if digest(current) != method.body_digest:
        raise SourceDrift(f"source drift: body of {method.id} changed since discovery")
    a = src.offset(method.body_span[0], method.body_span[1])
    b = src.offset(method.body_span[2], method.body_span[3])
    return text[:a] + stub_statement(t.stub_value) + text[b:]


# --------------------------------------------------------------------------- workspaces


class Workspace:
    """Private copy of a project that edits can be applied to and reverted."""

    def __init__(self, project_root: Path, ignore_names: Iterable[str] = ()):
        self.origin = Path(project_root).resolve()
        self._tmp = tempfile.TemporaryDirectory(prefix="riptide-ws-")
        self.path = Path(self._tmp.name) / self.origin.name
        skip = set(SKIP_DIRS) | set(ignore_names)

        def ignore(directory, names):
            return [n for n in names if n in skip or n.endswith(".pyc")]

        shutil.copytree(self.origin, self.path, ignore=ignore)

    def read(self, rel: str) -> str:
        return (self.path / rel).read_text(encoding="utf-8")

    @contextmanager
    def patched(self, files: dict[str, str]) -> Iterator[Path]:
        """Write *files* (relative path -> text) and restore the originals on exit."""
        saved: dict[str, bytes] = {}
        try:
            for rel, text in files.items():
                p = self.path / rel
                saved[rel] = p.read_bytes()
                p.write_text(text, encoding="utf-8")
            yield self.path
        finally:
            for rel, data in saved.items():
                (self.path / rel).write_bytes(data)

    def close(self) -> None:
        self._tmp.cleanup()

    def __enter__(self) -> "Workspace":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def compiles(text: str, filename: str) -> str | None:
    """Return a diagnostic if *text* is not valid Python, else ``None``."""
    try:
        compile(text, filename, "exec", dont_inherit=True)
    except (SyntaxError, ValueError) as exc:
        return f"{type(exc).__name__}: {exc}"
    return None


def detect(
    t: ExtremeTransformation,
    coverage: CoverageMap,
    workspace: Workspace,
    method: MethodDescriptor,
    environment: ExecutionConfig,
) -> tuple[ExtremeTransformation, TestRunReport | None]:
    """Run the covering tests against the transformed workspace.

    Detected when any covering test fails, errors or times out.
    """
    tests = coverage.tests_for(t.method)
    try:
        text = apply_transformation(workspace.read(method.file), method, t)
    except SourceDrift as exc:
        return replace(t, detection="unknown", diagnostic=str(exc)), None
    problem = compiles(text, method.file)
    if problem:
        return replace(t, detection="unknown", diagnostic=problem), None
    with workspace.patched({method.file: text}):
        report = execute(workspace.path, tests, environment)
    failing = report.failing() & set(tests)
    if failing:
        errored = sorted(x for x in failing if report.outcome(x) != "fail")
        note = f"failing: {', '.join(sorted(failing))}"
        if errored:
            note += f"; error/timeout (not assertion failure): {', '.join(errored)}"
        return replace(t, detection="detected", diagnostic=note), report
    if not report.complete:
        return replace(t, detection="unknown", diagnostic=report.diagnostic), report
    return replace(t, detection="undetected", diagnostic=""), report
