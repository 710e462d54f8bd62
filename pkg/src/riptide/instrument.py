"""Source-to-source instrumentation for state observation.

Method instrumentation routes every exit of a method through
``runtime.leave`` so the receiver, the arguments and the result are recorded
after the body has run. Test instrumentation wraps each non-constant
expression of a test body in ``runtime.obs`` and guards the whole body so
that an escaping exception is observed before being re-raised.

Both rewrites work on the AST and emit code with ``ast.unparse``; expression
sites are identified by their positions in the *original* test source so
that ids do not depend on the rewrite.
"""
from __future__ import annotations

import ast
import copy
from dataclasses import asdict, dataclass
from typing import Iterable

from riptide.project import MethodDescriptor, SourceText, TestCase
from riptide.transform import find_function

RT = "_riptide_rt"
ARGS = "_riptide_args"
EXC = "_riptide_exc"
RUNTIME_IMPORT = f"import riptide.runtime as {RT}"


class InstrumentationError(ValueError):
    pass


@dataclass(frozen=True)
class ExpressionSite:
    site_id: str
    test_id: str
    file: str
    line: int
    col: int
    end_line: int
    end_col: int
    depth: int
    statement_line: int
    text: str
    kind: str

    def to_record(self) -> dict:
        return asdict(self)

    @classmethod
    def from_record(cls, r: dict) -> "ExpressionSite":
        return cls(**r)


def _rt(attr: str) -> ast.Attribute:
    return ast.Attribute(value=ast.Name(RT, ast.Load()), attr=attr, ctx=ast.Load())


def _call(attr: str, *args: ast.expr) -> ast.Call:
    return ast.Call(func=_rt(attr), args=list(args), keywords=[])


def add_runtime_import(tree: ast.Module) -> None:
    body = tree.body
    i = 0
    if body and isinstance(body[0], ast.Expr) and isinstance(body[0].value, ast.Constant) \
            and isinstance(body[0].value.value, str):
        i = 1
    while i < len(body) and isinstance(body[i], ast.ImportFrom) and body[i].module == "__future__":
        i += 1
    if any(isinstance(s, ast.Import) and ast.unparse(s) == RUNTIME_IMPORT for s in body):
        return
    body.insert(i, ast.parse(RUNTIME_IMPORT).body[0])


# --------------------------------------------------------------------------- methods


class _ReturnRewriter(ast.NodeTransformer):
    def __init__(self, make_exit):
        self.make_exit = make_exit

    def visit_Return(self, node: ast.Return):
        value = node.value if node.value is not None else ast.Constant(None)
        return ast.copy_location(ast.Return(value=self.make_exit(value)), node)

    def visit_FunctionDef(self, node):
        return node

    visit_AsyncFunctionDef = visit_FunctionDef
    visit_ClassDef = visit_FunctionDef
    visit_Lambda = visit_FunctionDef


def _instrument_function(fn: ast.FunctionDef, method: MethodDescriptor) -> None:
    a = fn.args
    positional = [x.arg for x in a.posonlyargs + a.args]
    receiver = None
    if not method.is_static and positional:
        receiver, positional = positional[0], positional[1:]
    names = positional + ([a.vararg.arg] if a.vararg else []) + [x.arg for x in a.kwonlyargs] \
        + ([a.kwarg.arg] if a.kwarg else [])
    has_result = method.return_category != "void"

    def make_exit(value: ast.expr) -> ast.Call:
        return _call(
            "leave",
            ast.Constant(method.id),
            ast.Name(receiver, ast.Load()) if receiver else _rt("NO_RECEIVER"),
            ast.Name(ARGS, ast.Load()),
            value,
            ast.Constant(has_result),
        )

    body = list(fn.body)
    doc = []
    if body and isinstance(body[0], ast.Expr) and isinstance(body[0].value, ast.Constant) \
            and isinstance(body[0].value.value, str):
        doc, body = body[:1], body[1:]
    rewriter = _ReturnRewriter(make_exit)
    body = [rewriter.visit(s) for s in body]
    capture = ast.Assign(
        targets=[ast.Name(ARGS, ast.Store())],
        value=ast.Tuple([ast.Name(n, ast.Load()) for n in names], ast.Load()),
    )
    tail = []
    if not body or not isinstance(body[-1], (ast.Return, ast.Raise)):
        tail = [ast.Expr(make_exit(ast.Constant(None)))]
    fn.body = doc + [capture] + body + tail


def instrument_method(text: str, methods: MethodDescriptor | Iterable[MethodDescriptor]) -> str:
    """Return *text* with the given methods (all in that file) instrumented."""
    if isinstance(methods, MethodDescriptor):
        methods = [methods]
    tree = ast.parse(text)
    for m in methods:
        fn = find_function(tree, m)
        if isinstance(fn, ast.AsyncFunctionDef) or m.is_generator:
            raise InstrumentationError(f"cannot instrument generator or coroutine {m.id}")
        _instrument_function(fn, m)
    add_runtime_import(tree)
    return ast.unparse(ast.fix_missing_locations(tree)) + "\n"


# --------------------------------------------------------------------------- tests

_SCOPES = (ast.Lambda, ast.GeneratorExp, ast.ListComp, ast.SetComp, ast.DictComp, ast.JoinedStr)


def _is_constant(node: ast.AST) -> bool:
    if isinstance(node, ast.Constant):
        return True
    if isinstance(node, ast.UnaryOp):
        return _is_constant(node.operand)
    if isinstance(node, ast.BinOp):
        return _is_constant(node.left) and _is_constant(node.right)
    if isinstance(node, (ast.Tuple, ast.List, ast.Set)):
        return all(_is_constant(e) for e in node.elts)
    if isinstance(node, ast.Dict):
        return all(k is not None and _is_constant(k) for k in node.keys) and all(
            _is_constant(v) for v in node.values)
    return False


class _TestRewriter(ast.NodeTransformer):
    """Wrap observable expressions; leave assignment targets and constants alone."""

    def __init__(self, src: SourceText, test: TestCase, sites: list[ExpressionSite]):
        self.src = src
        self.test = test
        self.sites = sites
        self.depth = 0
        self.statement_line = 0

    def site(self, node: ast.expr) -> ast.expr:
        line, col, end_line, end_col = self.src.node_span(node)
        sid = f"{self.test.file}:{line}:{col}:{end_line}:{end_col}"
        self.sites.append(ExpressionSite(
            sid, self.test.id, self.test.file, line, col, end_line, end_col, self.depth,
            self.statement_line, ast.get_source_segment(self.src.text, node) or "", type(node).__name__,
        ))
        return ast.copy_location(_call("obs", ast.Constant(sid), node), node)

    # statements -------------------------------------------------------------
    def visit_stmt(self, node: ast.stmt):
        self.statement_line = node.lineno
        return self.generic_visit(node)

    def generic_visit(self, node):
        if isinstance(node, ast.stmt):
            self.statement_line = node.lineno
        return super().generic_visit(node)

    def visit_FunctionDef(self, node):
        return node

    visit_AsyncFunctionDef = visit_FunctionDef
    visit_ClassDef = visit_FunctionDef

    def visit_Assign(self, node: ast.Assign):
        self.statement_line = node.lineno
        node.value = self.visit(node.value)
        return node

    def visit_AugAssign(self, node: ast.AugAssign):
        self.statement_line = node.lineno
        node.value = self.visit(node.value)
        return node

    def visit_AnnAssign(self, node: ast.AnnAssign):
        self.statement_line = node.lineno
        if node.value is not None:
            node.value = self.visit(node.value)
        return node

    def visit_For(self, node: ast.For):
        self.statement_line = node.lineno
        node.iter = self.visit(node.iter)
        node.body = [self.visit(s) for s in node.body]
        node.orelse = [self.visit(s) for s in node.orelse]
        return node

    def visit_With(self, node: ast.With):
        self.statement_line = node.lineno
        for item in node.items:
            item.context_expr = self.visit(item.context_expr)
        node.body = [self.visit(s) for s in node.body]
        return node

    def visit_Delete(self, node):
        return node

    def visit_Assert(self, node: ast.Assert):
        self.statement_line = node.lineno
        node.test = self.visit(node.test)
        return node

    def visit_ExceptHandler(self, node: ast.ExceptHandler):
        node.body = [self.visit(s) for s in node.body]
        return node

    def visit_Match(self, node):
        self.statement_line = node.lineno
        node.subject = self.visit(node.subject)
        for case in node.cases:
            case.body = [self.visit(s) for s in case.body]
        return node

    # expressions ------------------------------------------------------------
    def visit_Constant(self, node):
        return node

    def visit_Name(self, node: ast.Name):
        if not isinstance(node.ctx, ast.Load):
            return node
        return self.site(node)

    def visit_Starred(self, node: ast.Starred):
        if isinstance(node.ctx, ast.Load):
            node.value = self.visit(node.value)
        return node

    def visit_NamedExpr(self, node: ast.NamedExpr):
        node.value = self.visit(node.value)
        return self.site(node)

    def visit_Call(self, node: ast.Call):
        self.depth += 1
        if isinstance(node.func, ast.Attribute):
            node.func.value = self.visit(node.func.value)
        elif not isinstance(node.func, ast.Name):
            node.func = self.visit(node.func)
        node.args = [self.visit(a) for a in node.args]
        for kw in node.keywords:
            kw.value = self.visit(kw.value)
        self.depth -= 1
        return self.site(node)

    def visit_Slice(self, node: ast.Slice):
        return self.generic_visit(node)

    def _compound(self, node):
        if _is_constant(node):
            return node
        if isinstance(node, _SCOPES):
            return self.site(node)
        if isinstance(node, (ast.Await, ast.Yield, ast.YieldFrom)):
            return node
        node = super().generic_visit(node)
        if isinstance(node, (ast.Attribute, ast.Subscript)) and not isinstance(node.ctx, ast.Load):
            return node
        return self.site(node)

    visit_Attribute = _compound
    visit_Subscript = _compound
    visit_BinOp = _compound
    visit_UnaryOp = _compound
    visit_BoolOp = _compound
    visit_Compare = _compound
    visit_IfExp = _compound
    visit_Tuple = _compound
    visit_List = _compound
    visit_Set = _compound
    visit_Dict = _compound
    visit_Lambda = _compound
    visit_GeneratorExp = _compound
    visit_ListComp = _compound
    visit_SetComp = _compound
    visit_DictComp = _compound
    visit_JoinedStr = _compound
    visit_Await = _compound
    visit_Yield = _compound
    visit_YieldFrom = _compound


def guard_site_id(test: TestCase) -> str:
    return f"{test.file}:{test.span[0]}:raised"


def _find_test(tree: ast.Module, test: TestCase) -> ast.FunctionDef:
    body = tree.body
    if test.class_name:
        cls = next((n for n in body if isinstance(n, ast.ClassDef) and n.name == test.class_name), None)
        if cls is None:
            raise InstrumentationError(f"class {test.class_name} not found for {test.id}")
        body = cls.body
    fn = next((n for n in body if isinstance(n, ast.FunctionDef) and n.name == test.name), None)
    if fn is None:
        raise InstrumentationError(f"test {test.id} not found")
    return fn


def instrument_tests(text: str, tests: Iterable[TestCase]) -> tuple[str, list[ExpressionSite]]:
    """Instrument the given tests (all from one file) for expression observation.

    Returns the new source and the observation sites, ordered by position.
    """
    tree = ast.parse(text)
    src = SourceText(text)
    sites: list[ExpressionSite] = []
    for test in tests:
        fn = _find_test(tree, test)
        body = list(fn.body)
        doc = []
        if body and isinstance(body[0], ast.Expr) and isinstance(body[0].value, ast.Constant) \
                and isinstance(body[0].value.value, str):
            doc, body = body[:1], body[1:]
        rewriter = _TestRewriter(src, test, sites)
        body = [rewriter.visit(copy.deepcopy(s)) for s in body] or [ast.Pass()]
        guard = guard_site_id(test)
        fn.body = doc + [
            ast.Try(
                body=body,
                handlers=[ast.ExceptHandler(
                    type=ast.Name("BaseException", ast.Load()),
                    name=EXC,
                    body=[ast.Expr(_call("obs", ast.Constant(guard), ast.Name(EXC, ast.Load()))), ast.Raise()],
                )],
                orelse=[ast.Expr(_call("obs", ast.Constant(guard), ast.Constant(None)))],
                finalbody=[],
            )
        ]
    add_runtime_import(tree)
    sites.sort(key=lambda s: (s.test_id, s.line, s.col, -s.end_line, -s.end_col))
    return ast.unparse(ast.fix_missing_locations(tree)) + "\n", sites
