"""Debug text format for Datalog programs.

One rule per line, ``head :- lit, lit.``; used by the test harness and the
plan command's output. Not a user-facing language. Parsing covers atoms,
negation, comparisons, and binds; aggregates are print-only.
"""

from __future__ import annotations

import re

from .ir import (
    Agg,
    Arith,
    Atom,
    Bind,
    Cmp,
    Concat,
    Const,
    DatalogError,
    DatalogProgram,
    Expr,
    Literal,
    Neg,
    Pos,
    Predicate,
    Rule,
    Var,
)

_WORD_OPS = ("starts_with", "ends_with", "contains", "name_match")


def format_term(t) -> str:
    if isinstance(t, Var):
        return t.name
    if isinstance(t.value, int):
        return str(t.value)
    return '"' + t.value.replace("\\", "\\\\").replace('"', '\\"') + '"'


def format_expr(e: Expr) -> str:
    if isinstance(e, (Var, Const)):
        return format_term(e)
    if isinstance(e, Arith):
        return f"({format_expr(e.left)} {e.op} {format_expr(e.right)})"
    return "cat(" + ", ".join(format_expr(p) for p in e.parts) + ")"


def format_atom(a: Atom) -> str:
    if not a.terms:
        return a.pred
    return f"{a.pred}(" + ", ".join(format_term(t) for t in a.terms) + ")"


def format_literal(lit: Literal) -> str:
    if isinstance(lit, Pos):
        return format_atom(lit.atom)
    if isinstance(lit, Neg):
        return "!" + format_atom(lit.atom)
    if isinstance(lit, Cmp):
        if lit.op in _WORD_OPS:
            return f"{lit.op}({format_expr(lit.left)}, {format_expr(lit.right)})"
        return f"{format_expr(lit.left)} {lit.op} {format_expr(lit.right)}"
    if isinstance(lit, Bind):
        return f"{lit.var.name} := {format_expr(lit.expr)}"
    if isinstance(lit, Agg):
        group = ", ".join(v.name for v in lit.group_vars)
        over = ", ".join(format_term(t) for t in lit.over)
        body = ", ".join(format_literal(b) for b in lit.body)
        return f"{lit.var.name} := {lit.fn}{{({over}) [{group}] : {body}}}"
    raise DatalogError(f"cannot format literal {lit!r}")


def format_rule(rule: Rule) -> str:
    head = format_atom(rule.head)
    if not rule.body:
        return head + "."
    return head + " :- " + ", ".join(format_literal(l) for l in rule.body) + "."


def format_program(program: DatalogProgram) -> str:
    lines = [format_rule(r) for r in program.rules]
    if program.outputs:
        lines.append("// output: " + ", ".join(program.outputs))
    return "\n".join(lines) + "\n"


_TOKEN_RE = re.compile(
    r"""\s*(?:
        (?P<str>"(?:\\.|[^"\\])*")
      | (?P<int>-?\d+)
      | (?P<ident>[A-Za-z_][A-Za-z0-9_.$]*)
      | (?P<punct>:-|:=|!=|<=|>=|[()!,.=<>+\-*/])
    )""",
    re.VERBOSE,
)


def _tokenize(line: str) -> list[str]:
    tokens = []
    pos = 0
    while pos < len(line):
        m = _TOKEN_RE.match(line, pos)
        if m is None:
            if line[pos:].strip() == "":
                break
            raise DatalogError(f"bad token at: {line[pos:pos + 20]!r}")
        pos = m.end()
        tokens.append(m.group().strip())
    return tokens


class _Parser:
    def __init__(self, tokens: list[str]):
        self.tokens = tokens
        self.i = 0

    def peek(self) -> str | None:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def next(self) -> str:
        tok = self.peek()
        if tok is None:
            raise DatalogError("unexpected end of rule")
        self.i += 1
        return tok

    def expect(self, tok: str) -> None:
        got = self.next()
        if got != tok:
            raise DatalogError(f"expected {tok!r}, got {got!r}")

    def term(self):
        tok = self.next()
        if tok.startswith('"'):
            body = tok[1:-1]
            return Const(body.replace('\\"', '"').replace("\\\\", "\\"))
        if re.fullmatch(r"-?\d+", tok):
            return Const(int(tok))
        return Var(tok)

    def expr(self) -> Expr:
        left = self.expr_atom()
        while self.peek() in ("+", "-", "*", "/"):
            op = self.next()
            right = self.expr_atom()
            left = Arith(op, left, right)
        return left

    def expr_atom(self) -> Expr:
        if self.peek() == "(":
            self.next()
            e = self.expr()
            self.expect(")")
            return e
        if self.peek() == "cat":
            self.next()
            self.expect("(")
            parts = [self.expr()]
            while self.peek() == ",":
                self.next()
                parts.append(self.expr())
            self.expect(")")
            return Concat(tuple(parts))
        return self.term()

    def atom(self) -> Atom:
        name = self.next()
        terms: list = []
        if self.peek() == "(":
            self.next()
            if self.peek() != ")":
                terms.append(self.term())
                while self.peek() == ",":
                    self.next()
                    terms.append(self.term())
            self.expect(")")
        return Atom(name, tuple(terms))

    def literal(self) -> Literal:
        if self.peek() == "!":
            self.next()
            return Neg(self.atom())
        if self.peek() in _WORD_OPS:
            op = self.next()
            self.expect("(")
            left = self.expr()
            self.expect(",")
            right = self.expr()
            self.expect(")")
            return Cmp(op, left, right)
        # lookahead: ident ( -> atom; otherwise expression comparison or bind
        save = self.i
        first = self.peek()
        if first is not None and re.fullmatch(r"[A-Za-z_][A-Za-z0-9_.$]*", first):
            self.next()
            if self.peek() == "(":
                self.i = save
                return Pos(self.atom())
            if self.peek() == ":=":
                self.next()
                return Bind(Var(first), self.expr())
            self.i = save
        left = self.expr()
        op = self.next()
        if op not in ("=", "!=", "<", "<=", ">", ">="):
            raise DatalogError(f"expected comparison operator, got {op!r}")
        right = self.expr()
        return Cmp(op, left, right)


def parse_rules(text: str) -> list[Rule]:
    rules = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("//") or line.startswith("#"):
            continue
        if line.endswith("."):
            line = line[:-1]
        parser = _Parser(_tokenize(line))
        head = parser.atom()
        body: list[Literal] = []
        if parser.peek() == ":-":
            parser.next()
            body.append(parser.literal())
            while parser.peek() == ",":
                parser.next()
                body.append(parser.literal())
        if parser.peek() is not None:
            raise DatalogError(f"trailing tokens in rule: {raw!r}")
        rules.append(Rule(Atom(head.pred, head.terms), tuple(body)))
    return rules


def infer_program(
    rules: list[Rule],
    outputs: list[str] | tuple[str, ...] = (),
    extra_edb: dict[str, int] | None = None,
) -> DatalogProgram:
    """Assemble a program, inferring predicate declarations from the rules.

    Head predicates become IDB; everything referenced only in bodies (plus
    extra_edb entries) becomes EDB. Arities are taken from first use.
    """
    preds: dict[str, Predicate] = {}
    for name, arity in (extra_edb or {}).items():
        preds[name] = Predicate(name, arity, "edb")
    for rule in rules:
        existing = preds.get(rule.head.pred)
        if existing is not None and existing.kind == "edb":
            raise DatalogError(f"EDB predicate {existing.name} used in a rule head")
        if existing is None:
            preds[rule.head.pred] = Predicate(rule.head.pred, rule.head.arity, "idb")

    def visit(lits):
        for lit in lits:
            if isinstance(lit, (Pos, Neg)):
                a = lit.atom
                if a.pred not in preds:
                    preds[a.pred] = Predicate(a.pred, a.arity, "edb")
            elif isinstance(lit, Agg):
                visit(lit.body)

    for rule in rules:
        visit(rule.body)
    return DatalogProgram(predicates=preds, rules=list(rules), outputs=list(outputs))
