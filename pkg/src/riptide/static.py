"""Static insight: call graph, entry points, field readers and stack distance.

Calls are resolved by name. ``self.m()`` and ``obj.m()`` reach every method
declared as ``m`` anywhere in the project (private, name-mangled names only
within the declaring class); a bare ``f()`` reaches module functions named
``f`` and, for a class name, that class's ``__init__``. The result is an
over-approximation, which is the safe direction for suggesting callers.
"""
from __future__ import annotations

import ast
import builtins
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple

from riptide.project import MethodDescriptor, ParseError, _own_nodes, python_files, is_test_file
from riptide.state import field_label
from riptide.transform import find_function

PATH_CAP = 10


class Edge(NamedTuple):
    caller: str
    callee: str
    line: int
    col: int


class Dangling(NamedTuple):
    caller: str
    call: str
    line: int
    col: int


@dataclass
class FieldInfo:
    cls: str
    storage: str
    label: str
    file: str

    @property
    def private(self) -> bool:
        return self.storage.startswith("_")


@dataclass
class CallGraph:
    nodes: dict[str, MethodDescriptor] = field(default_factory=dict)
    edges: list[Edge] = field(default_factory=list)
    dangling: list[Dangling] = field(default_factory=list)
    errors: list[ParseError] = field(default_factory=list)
    fields: dict[tuple[str, str], FieldInfo] = field(default_factory=dict)
    readers: dict[str, set[str]] = field(default_factory=dict)

    def callees(self, caller: str) -> set[str]:
        return {e.callee for e in self.edges if e.caller == caller}

    def callers(self, callee: str) -> set[str]:
        return self._rev().get(callee, set())

    def _rev(self) -> dict[str, set[str]]:
        rev: dict[str, set[str]] = {}
        for e in self.edges:
            rev.setdefault(e.callee, set()).add(e.caller)
        return rev

    def has_path(self, src: str, dst: str) -> bool:
        seen, todo = {src}, [src]
        fwd: dict[str, set[str]] = {}
        for e in self.edges:
            fwd.setdefault(e.caller, set()).add(e.callee)
        while todo:
            n = todo.pop()
            if n == dst:
                return True
            for c in fwd.get(n, ()):
                if c not in seen:
                    seen.add(c)
                    todo.append(c)
        return False

    def edge_list(self) -> str:
        """Text export: one ``caller -> callee @line:col`` per line."""
        lines = [f"{e.caller} -> {e.callee} @{e.line}:{e.col}" for e in sorted(self.edges)]
        lines += [f"{d.caller} -> ? {d.call} @{d.line}:{d.col}" for d in sorted(self.dangling)]
        return "\n".join(lines) + ("\n" if lines else "")

    def find_field(self, qualified: str) -> FieldInfo | None:
        """Resolve ``Class.label`` or ``Class.storage`` to a field."""
        cls, _, name = qualified.rpartition(".")
        if (cls, name) in self.fields:
            return self.fields[(cls, name)]
        for (c, _s), info in sorted(self.fields.items()):
            if c == cls and info.label == name:
                return info
        return None


def _mangled(name: str) -> bool:
    return name.startswith("__") and not name.endswith("__")


def _is_self_like(node: ast.AST, names: set[str]) -> bool:
    return isinstance(node, ast.Name) and node.id in names


def build_call_graph(
    project_root: Path,
    methods: Iterable[MethodDescriptor],
    *,
    sources: Mapping[str, str] | None = None,
) -> CallGraph:
    """Build the name-resolved call graph over *methods*.

    Test files are not part of the graph. Files that fail to parse are
    recorded in ``errors`` and contribute nothing.
    """
    root = Path(project_root)
    graph = CallGraph(nodes={m.id: m for m in methods})
    by_file: dict[str, list[MethodDescriptor]] = {}
    for m in graph.nodes.values():
        by_file.setdefault(m.file, []).append(m)
    trees: dict[str, ast.Module] = {}
    files = sorted(set(by_file) | set(sources or ()))
    if sources is None:
        files = sorted(set(by_file) | {f for f in python_files(root) if not is_test_file(f)})
    for rel in files:
        try:
            text = sources[rel] if sources is not None else (root / rel).read_text(encoding="utf-8")
            trees[rel] = ast.parse(text, filename=rel)
        except (SyntaxError, ValueError, OSError) as exc:
            graph.errors.append(ParseError(rel, str(exc)))

    # name tables
    by_name: dict[str, list[MethodDescriptor]] = {}
    functions: dict[str, list[MethodDescriptor]] = {}
    inits: dict[str, list[MethodDescriptor]] = {}
    for m in graph.nodes.values():
        if m.class_name is None:
            functions.setdefault(m.name, []).append(m)
        else:
            by_name.setdefault(m.name, []).append(m)
            if m.name == "__init__":
                inits.setdefault(m.class_name, []).append(m)
    class_names = set()
    for tree in trees.values():
        class_names |= {n.name for n in ast.walk(tree) if isinstance(n, ast.ClassDef)}

    edges: set[Edge] = set()
    dangling: set[Dangling] = set()
    for rel, ms in sorted(by_file.items()):
        tree = trees.get(rel)
        if tree is None:
            continue
        for m in ms:
            try:
                fn = find_function(tree, m)
            except Exception:
                continue
            args = [a.arg for a in fn.args.posonlyargs + fn.args.args]
            selfish = {args[0]} if args and (not m.is_static or "classmethod" in _decos(fn)) else set()
            for node in _own_nodes(fn):
                if isinstance(node, ast.Attribute) and isinstance(node.ctx, ast.Load):
                    _note_reader(graph, m, node)
                if not isinstance(node, ast.Call):
                    continue
                targets = _resolve(node.func, m, selfish, by_name, functions, inits, class_names)
                if targets is None:
                    continue
                pos = (node.lineno, node.col_offset)
                if targets:
                    edges.update(Edge(m.id, t.id, *pos) for t in targets)
                else:
                    dangling.add(Dangling(m.id, ast.unparse(node.func), *pos))
    graph.edges = sorted(edges)
    graph.dangling = sorted(dangling)
    _index_fields(graph, trees)
    return graph


def _decos(fn) -> set[str]:
    out = set()
    for d in fn.decorator_list:
        if isinstance(d, ast.Name):
            out.add(d.id)
        elif isinstance(d, ast.Attribute):
            out.add(d.attr)
    return out


_BUILTINS = set(dir(builtins))


def _resolve(func, m, selfish, by_name, functions, inits, class_names):
    """Candidate callees, ``[]`` for an unresolved call, ``None`` to ignore."""
    if isinstance(func, ast.Name):
        name = func.id
        if name in functions:
            same = [f for f in functions[name] if f.file == m.file]
            return same or functions[name]
        if name in inits:
            return inits[name]
        if name in class_names or name in _BUILTINS:
            return None
        return []
    if isinstance(func, ast.Attribute):
        name = func.attr
        cands = by_name.get(name, [])
        if _mangled(name):
            cands = [c for c in cands if c.class_name == m.class_name and c.file == m.file]
        if isinstance(func.value, ast.Call) and isinstance(func.value.func, ast.Name) \
                and func.value.func.id == "super":
            cands = [c for c in cands if c.class_name != m.class_name] or cands
        if cands:
            return sorted(cands, key=lambda c: c.id)
        if _is_self_like(func.value, selfish):
            return []
        return None
    return None


def _note_reader(graph: CallGraph, m: MethodDescriptor, node: ast.Attribute) -> None:
    graph.readers.setdefault(node.attr, set()).add(m.id)


def _index_fields(graph: CallGraph, trees: Mapping[str, ast.Module]) -> None:
    """Collect instance fields (``self.x = ...`` and class annotations) per class."""
    for rel, tree in sorted(trees.items()):
        for cls in (n for n in ast.walk(tree) if isinstance(n, ast.ClassDef)):
            storages: set[str] = set()
            for stmt in cls.body:
                if isinstance(stmt, ast.AnnAssign) and isinstance(stmt.target, ast.Name):
                    storages.add(stmt.target.id)
                if isinstance(stmt, (ast.FunctionDef, ast.AsyncFunctionDef)):
                    args = stmt.args.posonlyargs + stmt.args.args
                    if not args:
                        continue
                    me = args[0].arg
                    for node in ast.walk(stmt):
                        if isinstance(node, ast.Attribute) and isinstance(node.ctx, ast.Store) \
                                and _is_self_like(node.value, {me}):
                            storages.add(node.attr)
                if isinstance(stmt, ast.Assign):
                    slots = [t for t in stmt.targets if isinstance(t, ast.Name) and t.id == "__slots__"]
                    if slots and isinstance(stmt.value, (ast.Tuple, ast.List)):
                        storages |= {e.value for e in stmt.value.elts
                                     if isinstance(e, ast.Constant) and isinstance(e.value, str)}
            owners = {cls.name.lstrip("_")}
            for s in storages:
                stored = f"_{cls.name.lstrip('_')}{s}" if _mangled(s) else s
                graph.fields[(cls.name, s)] = FieldInfo(cls.name, s, field_label(stored, owners), rel)


def field_readers(graph: CallGraph, info: FieldInfo) -> set[str]:
    """Methods that load the field: by name, and within the class for mangled names."""
    readers = graph.readers.get(info.storage, set())
    if _mangled(info.storage):
        readers = {r for r in readers if graph.nodes[r].class_name == info.cls and graph.nodes[r].file == info.file}
    return set(readers)


# --------------------------------------------------------------------------- ranking


@dataclass
class Ranked:
    entries: list[tuple[MethodDescriptor, int]]
    capped: bool = False

    @property
    def methods(self) -> list[MethodDescriptor]:
        return [m for m, _ in self.entries]


def _backward(graph: CallGraph, starts: Mapping[str, int], cap: int = PATH_CAP) -> Ranked:
    """Breadth-first search towards callers, stopping at accessible methods."""
    rev = graph._rev()
    dist = dict(starts)
    found: dict[str, int] = {}
    capped = False
    queue = deque(sorted(starts, key=lambda s: (starts[s], s)))
    while queue:
        n = queue.popleft()
        d = dist[n]
        if graph.nodes[n].externally_invokable:
            found[n] = d
            continue
        if d >= cap:
            if rev.get(n):
                capped = True
            continue
        for c in sorted(rev.get(n, ())):
            if c not in dist:
                dist[c] = d + 1
                queue.append(c)
    entries = sorted(((graph.nodes[n], d) for n, d in found.items()), key=lambda x: (x[1], x[0].id))
    return Ranked(entries, capped)


def entry_point_search(target: MethodDescriptor, graph: CallGraph, cap: int = PATH_CAP) -> Ranked:
    if target.externally_invokable:
        return Ranked([(target, 0)])
    if target.id not in graph.nodes:
        return Ranked([])
    return _backward(graph, {target.id: 0}, cap)


def accessible_entry_points(target: MethodDescriptor, graph: CallGraph) -> list[MethodDescriptor]:
    """Accessible methods that can reach *target*, nearest first, ties by id."""
    return entry_point_search(target, graph).methods


def observer_search(field_name: str | FieldInfo, graph: CallGraph, cap: int = PATH_CAP) -> Ranked:
    info = field_name if isinstance(field_name, FieldInfo) else graph.find_field(field_name)
    if info is None:
        return Ranked([])
    readers = field_readers(graph, info)
    return _backward(graph, {r: 0 for r in readers}, cap)


def field_observers(field_name: str | FieldInfo, graph: CallGraph) -> list[MethodDescriptor]:
    """Accessible methods that read the field, directly or through callees."""
    return observer_search(field_name, graph).methods


# --------------------------------------------------------------------------- stack distance


class ReachViolated(RuntimeError):
    pass


@dataclass(frozen=True)
class StackDistanceSample:
    transformation_id: str
    distance: int
    test_id: str
    chain: tuple[str, ...] = ()

    def to_record(self) -> dict:
        return {"transformation_id": self.transformation_id, "distance": self.distance,
                "test_id": self.test_id, "chain": list(self.chain)}

    @classmethod
    def from_record(cls, r: Mapping) -> "StackDistanceSample":
        return cls(r["transformation_id"], r["distance"], r["test_id"], tuple(r.get("chain", ())))


def measure_stack_distance(
    transformation_id: str,
    method_id: str,
    covering_tests: Iterable[str],
    distances: Mapping[tuple[str, str], int],
    chains: Mapping[tuple[str, str], list[str]] | None = None,
) -> StackDistanceSample:
    """Smallest traced distance from any covering test to the method."""
    best = None
    for t in sorted(covering_tests):
        d = distances.get((method_id, t))
        if d is not None and (best is None or d < best[0]):
            best = (d, t)
    if best is None:
        raise ReachViolated(f"reach violated: {method_id} was not reached by its covering tests")
    chain = tuple((chains or {}).get((method_id, best[1]), ())) + (method_id,)
    return StackDistanceSample(transformation_id, best[0], best[1], chain)
