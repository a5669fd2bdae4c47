"""Lexer, AST, and recursive-descent parser for the .gdl query language."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class Diagnostic:
    line: int
    col: int
    message: str

    def __str__(self) -> str:
        return f"{self.line}:{self.col}: {self.message}"


class GodelSyntaxError(Exception):
    def __init__(self, diagnostics: list[Diagnostic]):
        super().__init__("; ".join(str(d) for d in diagnostics))
        self.diagnostics = diagnostics


KEYWORDS = {
    "use", "schema", "extends", "impl", "fn", "for", "if", "let",
    "yield", "return", "pub", "in", "true",
}

_PUNCT = [
    "::", "->", "&&", "!=", "<=", ">=",
    "{", "}", "(", ")", ",", ":", ".", "@", "!", "=", "<", ">", "+", "-", "*", "/",
]


@dataclass
class Token:
    kind: str  # ident | keyword | int | string | punct | eof
    text: str
    line: int
    col: int


def tokenize(source: str) -> tuple[list[Token], list[Diagnostic]]:
    tokens: list[Token] = []
    diagnostics: list[Diagnostic] = []
    line, col = 1, 1
    i, n = 0, len(source)

    def advance(count: int):
        nonlocal i, line, col
        for _ in range(count):
            if source[i] == "\n":
                line += 1
                col = 1
            else:
                col += 1
            i += 1

    while i < n:
        ch = source[i]
        if ch in " \t\r\n":
            advance(1)
            continue
        if source.startswith("//", i):
            end = source.find("\n", i)
            advance((end if end != -1 else n) - i)
            continue
        if source.startswith("/*", i):
            end = source.find("*/", i + 2)
            if end == -1:
                diagnostics.append(Diagnostic(line, col, "unterminated block comment"))
                break
            advance(end + 2 - i)
            continue
        if ch == '"':
            start_line, start_col = line, col
            j = i + 1
            buf = []
            ok = True
            while True:
                if j >= n or source[j] == "\n":
                    diagnostics.append(Diagnostic(start_line, start_col, "unterminated string"))
                    ok = False
                    break
                c = source[j]
                if c == "\\":
                    if j + 1 >= n:
                        diagnostics.append(Diagnostic(start_line, start_col, "bad escape"))
                        ok = False
                        break
                    esc = source[j + 1]
                    buf.append({"n": "\n", "t": "\t", '"': '"', "\\": "\\"}.get(esc, esc))
                    j += 2
                elif c == '"':
                    j += 1
                    break
                else:
                    buf.append(c)
                    j += 1
            advance(j - i)
            if ok:
                tokens.append(Token("string", "".join(buf), start_line, start_col))
            continue
        if ch.isdigit():
            start_line, start_col = line, col
            j = i
            while j < n and source[j].isdigit():
                j += 1
            tokens.append(Token("int", source[i:j], start_line, start_col))
            advance(j - i)
            continue
        if ch.isalpha() or ch == "_":
            start_line, start_col = line, col
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            text = source[i:j]
            kind = "keyword" if text in KEYWORDS else "ident"
            tokens.append(Token(kind, text, start_line, start_col))
            advance(j - i)
            continue
        for punct in _PUNCT:
            if source.startswith(punct, i):
                tokens.append(Token("punct", punct, line, col))
                advance(len(punct))
                break
        else:
            diagnostics.append(Diagnostic(line, col, f"unexpected character {ch!r}"))
            advance(1)
    tokens.append(Token("eof", "", line, col))
    return tokens, diagnostics


# ---------------------------------------------------------------------------
# AST


@dataclass
class TypeExpr:
    name: str
    is_set: bool = False  # "*Schema" return types
    line: int = 0
    col: int = 0


@dataclass
class Expr:
    line: int = 0
    col: int = 0
    ty: object = None  # filled by the type checker


@dataclass
class IntLit(Expr):
    value: int = 0


@dataclass
class StrLit(Expr):
    value: str = ""


@dataclass
class Name(Expr):
    ident: str = ""


@dataclass
class FieldAccess(Expr):
    recv: Expr = None
    name: str = ""


@dataclass
class MethodCall(Expr):
    recv: Expr = None
    name: str = ""
    args: list[Expr] = field(default_factory=list)


@dataclass
class FreeCall(Expr):
    name: str = ""
    args: list[Expr] = field(default_factory=list)


@dataclass
class StaticCall(Expr):
    type_name: str = ""
    name: str = ""
    args: list[Expr] = field(default_factory=list)


@dataclass
class BinOp(Expr):
    op: str = ""
    left: Expr = None
    right: Expr = None


@dataclass
class Cond:
    line: int = 0
    col: int = 0


@dataclass
class CmpCond(Cond):
    op: str = ""
    left: Expr = None
    right: Expr = None


@dataclass
class CallCond(Cond):
    call: Expr = None
    negated: bool = False


@dataclass
class InCond(Cond):
    left: Expr = None
    source: Expr = None


@dataclass
class Stmt:
    line: int = 0
    col: int = 0


@dataclass
class ForStmt(Stmt):
    bindings: list[tuple[str, Expr]] = field(default_factory=list)
    body: list[Stmt] = field(default_factory=list)


@dataclass
class IfStmt(Stmt):
    conds: list[Cond] = field(default_factory=list)
    body: list[Stmt] = field(default_factory=list)


@dataclass
class LetStmt(Stmt):
    bindings: list[tuple[str, Expr]] = field(default_factory=list)
    body: list[Stmt] = field(default_factory=list)


@dataclass
class YieldStmt(Stmt):
    schema: str = ""
    fields: list[tuple[str, Expr]] = field(default_factory=list)


@dataclass
class ReturnTrue(Stmt):
    pass


@dataclass
class ReturnExpr(Stmt):
    value: Expr = None


@dataclass
class ExprStmt(Stmt):
    call: Expr = None


@dataclass
class Param:
    name: str
    type: TypeExpr
    line: int = 0
    col: int = 0


@dataclass
class FnDecl:
    name: str
    params: list[Param]
    ret: TypeExpr | None
    body: list[Stmt]
    data_constraint: bool = False
    pub: bool = False
    line: int = 0
    col: int = 0


@dataclass
class SchemaDecl:
    name: str
    extends: str | None
    fields: list[tuple[str, TypeExpr]]
    line: int = 0
    col: int = 0


@dataclass
class ImplBlock:
    target: str
    methods: list[FnDecl]
    line: int = 0
    col: int = 0


@dataclass
class Module:
    uses: list[str]  # "coref::python::*" style paths
    schemas: list[SchemaDecl]
    impls: list[ImplBlock]
    functions: list[FnDecl]

    @property
    def main(self) -> FnDecl | None:
        for fn in self.functions:
            if fn.name == "main":
                return fn
        return None

    @property
    def has_main(self) -> bool:
        return self.main is not None


# ---------------------------------------------------------------------------
# Parser

_TOP_SYNC = {"use", "schema", "impl", "fn"}


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.i = 0
        self.diagnostics: list[Diagnostic] = []

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def at(self, kind: str, text: str | None = None) -> bool:
        t = self.tok
        return t.kind == kind and (text is None or t.text == text)

    def at_kw(self, word: str) -> bool:
        return self.at("keyword", word)

    def next(self) -> Token:
        t = self.tok
        if t.kind != "eof":
            self.i += 1
        return t

    def error(self, message: str, tok: Token | None = None):
        tok = tok or self.tok
        self.diagnostics.append(Diagnostic(tok.line, tok.col, message))
        raise _Recover()

    def expect(self, kind: str, text: str | None = None) -> Token:
        if self.at(kind, text):
            return self.next()
        want = text if text is not None else kind
        self.error(f"expected {want!r}, got {self.tok.text or self.tok.kind!r}")

    def expect_ident(self, what: str = "identifier") -> Token:
        if self.tok.kind == "ident":
            return self.next()
        self.error(f"expected {what}, got {self.tok.text or self.tok.kind!r}")

    # -- declarations

    def module(self) -> Module:
        uses: list[str] = []
        schemas: list[SchemaDecl] = []
        impls: list[ImplBlock] = []
        functions: list[FnDecl] = []
        while not self.at("eof"):
            try:
                if self.at_kw("use"):
                    uses.append(self.use_decl())
                elif self.at_kw("schema"):
                    schemas.append(self.schema_decl())
                elif self.at_kw("impl"):
                    impls.append(self.impl_block())
                elif self.at_kw("fn") or self.at("punct", "@") or self.at_kw("pub"):
                    functions.append(self.fn_decl())
                else:
                    self.error(
                        f"expected declaration (use/schema/impl/fn), got {self.tok.text!r}"
                    )
            except _Recover:
                self.sync_top()
        return Module(uses, schemas, impls, functions)

    def sync_top(self):
        depth = 0
        while not self.at("eof"):
            t = self.tok
            if t.kind == "punct" and t.text == "{":
                depth += 1
            elif t.kind == "punct" and t.text == "}":
                if depth > 0:
                    depth -= 1
                    self.next()
                    if depth == 0:
                        return
                    continue
            elif depth == 0 and t.kind == "keyword" and t.text in _TOP_SYNC:
                return
            self.next()

    def use_decl(self) -> str:
        self.expect("keyword", "use")
        parts = [self.expect_ident("library path").text]
        while self.at("punct", "::"):
            self.next()
            if self.at("punct", "*"):
                self.next()
                parts.append("*")
                break
            parts.append(self.expect_ident("library path segment").text)
        return "::".join(parts)

    def schema_decl(self) -> SchemaDecl:
        start = self.expect("keyword", "schema")
        name = self.expect_ident("schema name").text
        extends = None
        if self.at_kw("extends"):
            self.next()
            extends = self.expect_ident("parent schema name").text
        self.expect("punct", "{")
        fields: list[tuple[str, TypeExpr]] = []
        if not self.at("punct", "}"):
            fields.append(self.field_decl())
            while self.at("punct", ","):
                self.next()
                if self.at("punct", "}"):
                    break
                fields.append(self.field_decl())
        self.expect("punct", "}")
        return SchemaDecl(name, extends, fields, start.line, start.col)

    def field_decl(self) -> tuple[str, TypeExpr]:
        name = self.expect_ident("field name").text
        self.expect("punct", ":")
        return name, self.type_expr()

    def type_expr(self) -> TypeExpr:
        tok = self.tok
        if self.at("punct", "*"):
            self.next()
            name = self.expect_ident("schema name").text
            return TypeExpr(name, is_set=True, line=tok.line, col=tok.col)
        name = self.expect_ident("type name").text
        return TypeExpr(name, line=tok.line, col=tok.col)

    def impl_block(self) -> ImplBlock:
        start = self.expect("keyword", "impl")
        target = self.expect_ident("schema name").text
        self.expect("punct", "{")
        methods: list[FnDecl] = []
        while not self.at("punct", "}") and not self.at("eof"):
            methods.append(self.fn_decl())
        self.expect("punct", "}")
        return ImplBlock(target, methods, start.line, start.col)

    def fn_decl(self) -> FnDecl:
        data_constraint = False
        pub = False
        if self.at("punct", "@"):
            self.next()
            ann = self.expect_ident("annotation name")
            if ann.text != "data_constraint":
                self.error(f"unknown annotation @{ann.text}", ann)
            data_constraint = True
        if self.at_kw("pub"):
            self.next()
            pub = True
        start = self.expect("keyword", "fn")
        name = self.expect_ident("function name").text
        self.expect("punct", "(")
        params: list[Param] = []
        if not self.at("punct", ")"):
            params.append(self.param())
            while self.at("punct", ","):
                self.next()
                params.append(self.param())
        self.expect("punct", ")")
        ret = None
        if self.at("punct", "->"):
            self.next()
            ret = self.type_expr()
        body = self.block()
        return FnDecl(name, params, ret, body, data_constraint, pub, start.line, start.col)

    def param(self) -> Param:
        tok = self.expect_ident("parameter name")
        self.expect("punct", ":")
        return Param(tok.text, self.type_expr(), tok.line, tok.col)

    # -- statements

    def block(self) -> list[Stmt]:
        self.expect("punct", "{")
        stmts: list[Stmt] = []
        while not self.at("punct", "}") and not self.at("eof"):
            stmts.append(self.stmt())
        self.expect("punct", "}")
        return stmts

    def stmt(self) -> Stmt:
        tok = self.tok
        if self.at_kw("for"):
            self.next()
            self.expect("punct", "(")
            bindings = [self.binding()]
            while self.at("punct", ","):
                self.next()
                bindings.append(self.binding())
            self.expect("punct", ")")
            return ForStmt(tok.line, tok.col, bindings, self.block())
        if self.at_kw("if"):
            self.next()
            self.expect("punct", "(")
            conds = [self.cond()]
            while self.at("punct", "&&"):
                self.next()
                conds.append(self.cond())
            self.expect("punct", ")")
            return IfStmt(tok.line, tok.col, conds, self.block())
        if self.at_kw("let"):
            self.next()
            self.expect("punct", "(")
            bindings = [self.let_binding()]
            while self.at("punct", ","):
                self.next()
                bindings.append(self.let_binding())
            self.expect("punct", ")")
            return LetStmt(tok.line, tok.col, bindings, self.block())
        if self.at_kw("yield"):
            self.next()
            schema = self.expect_ident("schema name").text
            self.expect("punct", "{")
            fields = [self.yield_field()]
            while self.at("punct", ","):
                self.next()
                fields.append(self.yield_field())
            self.expect("punct", "}")
            return YieldStmt(tok.line, tok.col, schema, fields)
        if self.at_kw("return"):
            self.next()
            if self.at_kw("true"):
                self.next()
                return ReturnTrue(tok.line, tok.col)
            return ReturnExpr(tok.line, tok.col, self.expr())
        expr = self.expr()
        if not isinstance(expr, (FreeCall, MethodCall, StaticCall)):
            self.error("expected a statement", tok)
        return ExprStmt(tok.line, tok.col, expr)

    def binding(self) -> tuple[str, Expr]:
        name = self.expect_ident("binding variable").text
        self.expect("keyword", "in")
        return name, self.expr()

    def let_binding(self) -> tuple[str, Expr]:
        name = self.expect_ident("let variable").text
        self.expect("punct", "=")
        return name, self.expr()

    def yield_field(self) -> tuple[str, Expr]:
        name = self.expect_ident("field name").text
        self.expect("punct", ":")
        return name, self.expr()

    # -- conditions and expressions

    def cond(self) -> Cond:
        tok = self.tok
        if self.at("punct", "!"):
            self.next()
            call = self.expr()
            if not isinstance(call, (FreeCall, MethodCall)):
                self.error("'!' applies to a predicate call", tok)
            return CallCond(tok.line, tok.col, call, negated=True)
        left = self.expr()
        if self.tok.kind == "punct" and self.tok.text in ("=", "!=", "<", "<=", ">", ">="):
            op = self.next().text
            right = self.expr()
            return CmpCond(tok.line, tok.col, op, left, right)
        if self.at_kw("in"):
            self.next()
            return InCond(tok.line, tok.col, left, self.expr())
        if isinstance(left, (FreeCall, MethodCall)):
            return CallCond(tok.line, tok.col, left, negated=False)
        self.error("expected comparison, 'in', or predicate call", tok)

    def expr(self) -> Expr:
        return self.additive()

    def additive(self) -> Expr:
        left = self.multiplicative()
        while self.tok.kind == "punct" and self.tok.text in ("+", "-"):
            op = self.next().text
            right = self.multiplicative()
            left = BinOp(left.line, left.col, None, op, left, right)
        return left

    def multiplicative(self) -> Expr:
        left = self.postfix()
        while self.tok.kind == "punct" and self.tok.text in ("*", "/"):
            op = self.next().text
            right = self.postfix()
            left = BinOp(left.line, left.col, None, op, left, right)
        return left

    def postfix(self) -> Expr:
        expr = self.primary()
        while self.at("punct", "."):
            self.next()
            name = self.expect_ident("member name")
            if self.at("punct", "("):
                args = self.call_args()
                expr = MethodCall(name.line, name.col, None, expr, name.text, args)
            else:
                expr = FieldAccess(name.line, name.col, None, expr, name.text)
        return expr

    def call_args(self) -> list[Expr]:
        self.expect("punct", "(")
        args: list[Expr] = []
        if not self.at("punct", ")"):
            args.append(self.expr())
            while self.at("punct", ","):
                self.next()
                args.append(self.expr())
        self.expect("punct", ")")
        return args

    def primary(self) -> Expr:
        tok = self.tok
        if tok.kind == "int":
            self.next()
            return IntLit(tok.line, tok.col, None, int(tok.text))
        if tok.kind == "punct" and tok.text == "-":
            self.next()
            inner = self.primary()
            if isinstance(inner, IntLit):
                inner.value = -inner.value
                return inner
            return BinOp(tok.line, tok.col, None, "-", IntLit(tok.line, tok.col, None, 0), inner)
        if tok.kind == "string":
            self.next()
            return StrLit(tok.line, tok.col, None, tok.text)
        if tok.kind == "punct" and tok.text == "(":
            self.next()
            inner = self.expr()
            self.expect("punct", ")")
            return inner
        if tok.kind == "ident":
            self.next()
            if self.at("punct", "::"):
                self.next()
                method = self.expect_ident("static method name")
                args = self.call_args()
                return StaticCall(tok.line, tok.col, None, tok.text, method.text, args)
            if self.at("punct", "("):
                args = self.call_args()
                return FreeCall(tok.line, tok.col, None, tok.text, args)
            return Name(tok.line, tok.col, None, tok.text)
        self.error(f"expected expression, got {tok.text or tok.kind!r}")


class _Recover(Exception):
    pass


def parse(source: str) -> Module:
    """Parse a .gdl module; raises GodelSyntaxError with all diagnostics."""
    tokens, diagnostics = tokenize(source)
    parser = _Parser(tokens)
    parser.diagnostics = diagnostics + parser.diagnostics
    module = parser.module()
    if parser.diagnostics:
        raise GodelSyntaxError(parser.diagnostics)
    return module
