"""Python fact extraction over the stdlib ast and tokenize modules.

Per-file and deterministic: the same bytes at the same relative path yield
identical rows. Files that fail to parse still get a file row plus a
diagnostic row, and contribute no AST facts; one bad file never aborts a
run.
"""

from __future__ import annotations

import ast
import io
import tokenize
from dataclasses import dataclass, field

from ..facts import content_hash
from .ids import NodePath, node_id

_STMT_KINDS = {
    ast.If: "if",
    ast.For: "for",
    ast.AsyncFor: "for",
    ast.While: "while",
    ast.Try: "try",
    ast.With: "with",
    ast.AsyncWith: "with",
    ast.Return: "return",
    ast.Assign: "assign",
    ast.AugAssign: "assign",
    ast.AnnAssign: "assign",
    ast.Expr: "expr",
    ast.Raise: "raise",
    ast.Match: "match",
    ast.Import: "import",
    ast.ImportFrom: "import",
    ast.Pass: "pass",
    ast.Break: "break",
    ast.Continue: "continue",
    ast.Assert: "assert",
    ast.Delete: "delete",
    ast.Global: "global",
    ast.Nonlocal: "nonlocal",
}


@dataclass
class FileFacts:
    relative_path: str
    content_hash: str
    line_count: int
    rows: dict[str, set[tuple]] = field(default_factory=dict)
    parse_error: str | None = None

    def add(self, relation: str, row: tuple) -> None:
        self.rows.setdefault(relation, set()).add(row)


def expr_text(node: ast.expr) -> str:
    """Compact dotted rendering of call targets and decorators."""
    if isinstance(node, ast.Name):
        return node.id
    if isinstance(node, ast.Attribute):
        return expr_text(node.value) + "." + node.attr
    if isinstance(node, ast.Call):
        return expr_text(node.func) + "()"
    if isinstance(node, ast.Subscript):
        return expr_text(node.value) + "[]"
    if isinstance(node, ast.Constant):
        return repr(node.value)
    return "?"


def _line_metrics(source: str) -> tuple[int, int, int]:
    """(line_count, code_line_count, comment_line_count).

    Full-line '#' comments and docstring lines count as comment lines;
    mixed code+comment lines count as code; the rest are blank.
    """
    lines = source.splitlines()
    total = len(lines)
    code_lines: set[int] = set()
    comment_token_lines: set[int] = set()
    try:
        tokens = list(tokenize.generate_tokens(io.StringIO(source).readline))
    except (tokenize.TokenError, SyntaxError, IndentationError, ValueError):
        code = sum(
            1 for l in lines if l.strip() and not l.lstrip().startswith("#")
        )
        comment = sum(1 for l in lines if l.lstrip().startswith("#"))
        return total, code, comment
    skip = {
        tokenize.NL,
        tokenize.NEWLINE,
        tokenize.INDENT,
        tokenize.DEDENT,
        tokenize.ENDMARKER,
        tokenize.ENCODING,
    }
    for tok in tokens:
        if tok.type == tokenize.COMMENT:
            comment_token_lines.add(tok.start[0])
        elif tok.type not in skip:
            for line in range(tok.start[0], tok.end[0] + 1):
                code_lines.add(line)

    docstring_lines: set[int] = set()
    try:
        tree = ast.parse(source)
    except (SyntaxError, ValueError):
        tree = None
    if tree is not None:
        for node in [tree, *ast.walk(tree)]:
            if isinstance(node, (ast.Module, ast.ClassDef, ast.FunctionDef, ast.AsyncFunctionDef)):
                body = node.body
                if body and isinstance(body[0], ast.Expr) and isinstance(
                    body[0].value, ast.Constant
                ) and isinstance(body[0].value.value, str):
                    expr = body[0]
                    for line in range(expr.lineno, expr.end_lineno + 1):
                        docstring_lines.add(line)

    code = code_lines - docstring_lines
    comment = docstring_lines | (comment_token_lines - code_lines)
    return total, len(code), len(comment)


class _Extractor:
    def __init__(self, relative_path: str, source: str, digest: str):
        self.path = relative_path
        self.digest = digest
        self.facts = FileFacts(relative_path, digest, len(source.splitlines()))
        self._child_counters: dict[NodePath, int] = {}
        self._stmt_counters: dict[int, int] = {}

    def nid(self, parent: NodePath, kind: str) -> tuple[int, NodePath]:
        index = self._child_counters.get(parent, 0)
        self._child_counters[parent] = index + 1
        path = parent + ((kind, index),)
        return node_id(self.digest, self.path, path), path

    def location(self, owner_path: NodePath, node: ast.AST, file_id: int) -> int:
        loc_id, _ = self.nid(owner_path, "loc")
        end_line = getattr(node, "end_lineno", None) or node.lineno
        end_col = getattr(node, "end_col_offset", None) or node.col_offset
        self.facts.add(
            "location", (loc_id, file_id, node.lineno, node.col_offset, end_line, end_col)
        )
        return loc_id

    def run(self, tree: ast.Module, file_id: int) -> None:
        self.file_id = file_id
        self.walk_body(tree.body, (), file_id, enclosing_fn=0)

    # -- declarations

    def walk_body(self, body: list[ast.stmt], parent_path: NodePath, parent_id: int,
                  enclosing_fn: int) -> None:
        for stmt in body:
            if isinstance(stmt, ast.ClassDef):
                self.handle_class(stmt, parent_path, enclosing_fn)
            elif isinstance(stmt, (ast.FunctionDef, ast.AsyncFunctionDef)):
                self.handle_function(stmt, parent_path, parent_id, enclosing_fn,
                                     in_class=False)
            else:
                self.handle_statement(stmt, parent_path, parent_id, enclosing_fn)

    def handle_class(self, node: ast.ClassDef, parent_path: NodePath,
                     enclosing_fn: int) -> None:
        class_id, path = self.nid(parent_path, "class")
        loc = self.location(path, node, self.file_id)
        self.facts.add("class", (class_id, node.name, self.file_id, loc))
        for index, base in enumerate(node.bases):
            self.facts.add("class_base", (class_id, index, expr_text(base)))
            self.visit_expr(base, path, enclosing_fn, None)
        for deco in node.decorator_list:
            deco_id, _ = self.nid(path, "decorator")
            self.facts.add("decorator", (deco_id, class_id, expr_text(deco)))
            self.visit_expr(deco, path, enclosing_fn, None)
        for stmt in node.body:
            if isinstance(stmt, (ast.FunctionDef, ast.AsyncFunctionDef)):
                self.handle_function(stmt, path, class_id, enclosing_fn, in_class=True)
            elif isinstance(stmt, ast.ClassDef):
                self.handle_class(stmt, path, enclosing_fn)
            else:
                self.handle_statement(stmt, path, class_id, enclosing_fn)

    def handle_function(self, node, parent_path: NodePath, parent_id: int,
                        enclosing_fn: int, in_class: bool) -> None:
        fn_id, path = self.nid(parent_path, "function")
        loc = self.location(path, node, self.file_id)
        kind = "method" if in_class else "function"
        self.facts.add("function", (fn_id, node.name, kind, parent_id, self.file_id, loc))
        self.handle_params(node.args, fn_id, path)
        for deco in node.decorator_list:
            deco_id, _ = self.nid(path, "decorator")
            self.facts.add("decorator", (deco_id, fn_id, expr_text(deco)))
            self.visit_expr(deco, path, enclosing_fn, None)
        for default in list(node.args.defaults) + [
            d for d in node.args.kw_defaults if d is not None
        ]:
            self.visit_expr(default, path, enclosing_fn, None)
        self.walk_body(node.body, path, fn_id, enclosing_fn=fn_id)

    def handle_lambda(self, node: ast.Lambda, parent_path: NodePath,
                      enclosing_fn: int, stmt_id: int | None) -> None:
        fn_id, path = self.nid(parent_path, "function")
        loc = self.location(path, node, self.file_id)
        parent = enclosing_fn if enclosing_fn else self.file_id
        self.facts.add("function", (fn_id, "<lambda>", "lambda", parent, self.file_id, loc))
        self.handle_params(node.args, fn_id, path)
        self.visit_expr(node.body, path, fn_id, stmt_id)

    def handle_params(self, args: ast.arguments, fn_id: int, path: NodePath) -> None:
        ordered: list[ast.arg] = []
        ordered.extend(args.posonlyargs)
        ordered.extend(args.args)
        if args.vararg:
            ordered.append(args.vararg)
        ordered.extend(args.kwonlyargs)
        if args.kwarg:
            ordered.append(args.kwarg)
        for index, arg in enumerate(ordered):
            param_id, _ = self.nid(path, "param")
            self.facts.add("parameter", (param_id, fn_id, index, arg.arg))

    # -- statements

    def handle_statement(self, stmt: ast.stmt, parent_path: NodePath, parent_id: int,
                         enclosing_fn: int) -> None:
        kind = _STMT_KINDS.get(type(stmt), "expr")
        stmt_id, path = self.nid(parent_path, "stmt")
        loc = self.location(path, stmt, self.file_id)
        self.facts.add("statement", (stmt_id, kind, parent_id, self._stmt_index(parent_id), loc))

        if isinstance(stmt, (ast.Import, ast.ImportFrom)):
            self.handle_import(stmt, path)

        for expr in self._statement_exprs(stmt):
            self.visit_expr(expr, path, enclosing_fn, stmt_id)

        # nested blocks
        if isinstance(stmt, (ast.If, ast.For, ast.AsyncFor, ast.While,
                             ast.With, ast.AsyncWith)):
            self._walk_nested(stmt.body, path, stmt_id, enclosing_fn)
            self._walk_nested(getattr(stmt, "orelse", []), path, stmt_id, enclosing_fn)
        elif isinstance(stmt, ast.Try):
            self._walk_nested(stmt.body, path, stmt_id, enclosing_fn)
            for handler in stmt.handlers:
                handler_id, hpath = self.nid(path, "handler")
                hloc = self.location(hpath, handler, self.file_id)
                self.facts.add(
                    "statement",
                    (handler_id, "except_handler", stmt_id,
                     self._stmt_index(stmt_id), hloc),
                )
                if handler.type is not None:
                    self.visit_expr(handler.type, hpath, enclosing_fn, handler_id)
                self._walk_nested(handler.body, hpath, handler_id, enclosing_fn)
            self._walk_nested(stmt.orelse, path, stmt_id, enclosing_fn)
            self._walk_nested(stmt.finalbody, path, stmt_id, enclosing_fn)
        elif isinstance(stmt, ast.Match):
            for case in stmt.cases:
                case_id, cpath = self.nid(path, "case")
                cloc = self.location(cpath, case.pattern, self.file_id)
                self.facts.add(
                    "statement",
                    (case_id, "match_case", stmt_id, self._stmt_index(stmt_id), cloc),
                )
                if case.guard is not None:
                    self.visit_expr(case.guard, cpath, enclosing_fn, case_id)
                self._walk_nested(case.body, cpath, case_id, enclosing_fn)

    def _stmt_index(self, parent_id: int) -> int:
        value = self._stmt_counters.get(parent_id, 0)
        self._stmt_counters[parent_id] = value + 1
        return value

    def _walk_nested(self, body: list[ast.stmt], path: NodePath, parent_id: int,
                     enclosing_fn: int) -> None:
        for stmt in body:
            if isinstance(stmt, ast.ClassDef):
                self.handle_class(stmt, path, enclosing_fn)
            elif isinstance(stmt, (ast.FunctionDef, ast.AsyncFunctionDef)):
                self.handle_function(stmt, path, parent_id, enclosing_fn, in_class=False)
            else:
                self.handle_statement(stmt, path, parent_id, enclosing_fn)

    def handle_import(self, stmt, path: NodePath) -> None:
        if isinstance(stmt, ast.Import):
            for alias in stmt.names:
                imp_id, _ = self.nid(path, "import")
                self.facts.add(
                    "import", (imp_id, self.file_id, alias.name, alias.asname or "")
                )
        else:
            dots = "." * stmt.level
            for alias in stmt.names:
                imp_id, _ = self.nid(path, "import")
                if stmt.module:
                    name = f"{dots}{stmt.module}.{alias.name}"
                else:
                    name = f"{dots}{alias.name}"
                self.facts.add(
                    "import", (imp_id, self.file_id, name, alias.asname or "")
                )

    def _statement_exprs(self, stmt: ast.stmt) -> list[ast.expr]:
        """Direct expressions of a statement (not those of nested blocks)."""
        blocks = {"body", "orelse", "finalbody", "handlers", "cases"}
        out: list[ast.expr] = []
        for name, value in ast.iter_fields(stmt):
            if name in blocks:
                continue
            if isinstance(value, ast.expr):
                out.append(value)
            elif isinstance(value, list):
                for item in value:
                    if isinstance(item, ast.expr):
                        out.append(item)
                    elif isinstance(item, ast.withitem):
                        out.append(item.context_expr)
                        if item.optional_vars is not None:
                            out.append(item.optional_vars)
        return out

    # -- expressions: calls, lambdas, boolean branches

    def visit_expr(self, expr: ast.expr, path: NodePath, enclosing_fn: int,
                   stmt_id: int | None) -> None:
        if expr is None:
            return
        for node in self._expr_nodes(expr):
            if isinstance(node, ast.Call):
                call_id, cpath = self.nid(path, "call")
                loc = self.location(cpath, node, self.file_id)
                self.facts.add(
                    "call",
                    (call_id, enclosing_fn, expr_text(node.func), loc),
                )
            elif isinstance(node, ast.BoolOp) and stmt_id is not None:
                for _ in range(len(node.values) - 1):
                    branch_id, bpath = self.nid(path, "boolop")
                    loc = self.location(bpath, node, self.file_id)
                    self.facts.add(
                        "statement",
                        (branch_id, "bool_op_branch", stmt_id,
                         self._stmt_index(stmt_id), loc),
                    )
            elif isinstance(node, ast.Lambda):
                self.handle_lambda(node, path, enclosing_fn, stmt_id)

    def _expr_nodes(self, expr: ast.expr):
        """Walk an expression without descending into lambda bodies."""
        stack = [expr]
        while stack:
            node = stack.pop()
            yield node
            if isinstance(node, ast.Lambda):
                continue  # handle_lambda walks the body itself
            stack.extend(
                child
                for child in reversed(list(ast.iter_child_nodes(node)))
                if isinstance(child, ast.expr)
            )


def extract_python_file(relative_path: str, data: bytes) -> FileFacts:
    digest = content_hash(data)
    try:
        source = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        facts = FileFacts(relative_path, digest, 0)
        file_id = node_id(digest, relative_path, (("file", 0),))
        facts.add("file", (file_id, relative_path, digest, 0, 0, 0))
        diag_id = node_id(digest, relative_path, (("diag", 0),))
        facts.add("diagnostic", (diag_id, file_id, "decode_error", str(exc)))
        facts.parse_error = str(exc)
        return facts

    total, code, comment = _line_metrics(source)
    extractor = _Extractor(relative_path, source, digest)
    facts = extractor.facts
    facts.line_count = total
    file_id = node_id(digest, relative_path, (("file", 0),))
    facts.add("file", (file_id, relative_path, digest, total, code, comment))

    try:
        tree = ast.parse(source, filename=relative_path)
    except (SyntaxError, ValueError) as exc:
        message = f"line {getattr(exc, 'lineno', 0)}: {getattr(exc, 'msg', str(exc))}"
        diag_id = node_id(digest, relative_path, (("diag", 0),))
        facts.add("diagnostic", (diag_id, file_id, "parse_error", message))
        facts.parse_error = message
        return facts

    extractor.run(tree, file_id)
    _extract_comments(extractor, source, file_id)
    return facts


def _extract_comments(extractor: _Extractor, source: str, file_id: int) -> None:
    try:
        tokens = tokenize.generate_tokens(io.StringIO(source).readline)
        comments = [t for t in tokens if t.type == tokenize.COMMENT]
    except (tokenize.TokenError, SyntaxError, IndentationError, ValueError):
        return
    for index, tok in enumerate(comments):
        path = (("comment", index),)
        cid = node_id(extractor.digest, extractor.path, path)
        loc_id = node_id(extractor.digest, extractor.path, path + (("loc", 0),))
        extractor.facts.add(
            "location",
            (loc_id, file_id, tok.start[0], tok.start[1], tok.end[0], tok.end[1]),
        )
        extractor.facts.add("comment", (cid, file_id, loc_id, tok.string))
