"""Core Datalog IR: terms, literals, rules, programs, and safety checking."""

from __future__ import annotations

from dataclasses import dataclass, field


class DatalogError(Exception):
    pass


class StratifyError(DatalogError):
    def __init__(self, message: str, cycle: list[str] | None = None):
        super().__init__(message)
        self.cycle = cycle or []


class EvalError(DatalogError):
    pass


@dataclass(frozen=True)
class Var:
    name: str

    def __repr__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Const:
    value: int | str

    def __repr__(self) -> str:
        return repr(self.value)


@dataclass(frozen=True)
class Arith:
    """Integer arithmetic; division truncates toward zero."""

    op: str  # + - * /
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Concat:
    """String concatenation; int operands are rendered in decimal."""

    parts: tuple["Expr", ...]


Term = Var | Const
Expr = Var | Const | Arith | Concat


@dataclass(frozen=True)
class Atom:
    pred: str
    terms: tuple[Term, ...]

    @property
    def arity(self) -> int:
        return len(self.terms)

    def vars(self) -> set[str]:
        return {t.name for t in self.terms if isinstance(t, Var)}


@dataclass(frozen=True)
class Pos:
    atom: Atom


@dataclass(frozen=True)
class Neg:
    atom: Atom


# Comparison operators. Beyond the arithmetic six, a few string predicates
# back the query language's string conditions; name_match is the name-based
# call-resolution primitive (exact name, or dotted text ending in ".name").
CMP_OPS = ("=", "!=", "<", "<=", ">", ">=",
           "starts_with", "ends_with", "contains", "name_match")


@dataclass(frozen=True)
class Cmp:
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Bind:
    var: Var
    expr: Expr


AGG_FNS = ("count", "sum", "min", "max")


@dataclass(frozen=True)
class Agg:
    """Grouped sub-query aggregation.

    For each binding of group_vars, body is evaluated as a sub-query, its
    results are projected onto the over terms and deduplicated, and fn is
    applied: count of tuples, or sum/min/max over the first over term.
    Empty groups yield count=0 and no tuple for sum/min/max.
    """

    var: Var
    fn: str
    group_vars: tuple[Var, ...]
    over: tuple[Term, ...]
    body: tuple["Literal", ...]


Literal = Pos | Neg | Cmp | Bind | Agg


@dataclass(frozen=True)
class Rule:
    head: Atom
    body: tuple[Literal, ...]
    provenance: str = ""

    def label(self, index: int | None = None) -> str:
        if self.provenance:
            return self.provenance
        if index is not None:
            return f"rule {index} ({self.head.pred}/{self.head.arity})"
        return f"rule for {self.head.pred}/{self.head.arity}"


@dataclass(frozen=True)
class Predicate:
    name: str
    arity: int
    kind: str  # "edb" | "idb"


@dataclass
class DatalogProgram:
    predicates: dict[str, Predicate]
    rules: list[Rule]
    outputs: list[str] = field(default_factory=list)
    # Column names per predicate, used when rendering output relations.
    output_columns: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def validate(self) -> None:
        for rule in self.rules:
            self._check_atom(rule.head)
            pred = self.predicates[rule.head.pred]
            if pred.kind != "idb":
                raise DatalogError(f"EDB predicate {pred.name} appears in a rule head")
            for atom in rule_atoms(rule):
                self._check_atom(atom)
        for name in self.outputs:
            pred = self.predicates.get(name)
            if pred is None or pred.kind != "idb":
                raise DatalogError(f"output {name} is not a declared IDB predicate")

    def _check_atom(self, atom: Atom) -> None:
        pred = self.predicates.get(atom.pred)
        if pred is None:
            raise DatalogError(f"predicate {atom.pred} is not declared")
        if pred.arity != atom.arity:
            raise DatalogError(
                f"predicate {atom.pred}: arity {atom.arity} used, declared {pred.arity}"
            )

    def idb_names(self) -> list[str]:
        return [p.name for p in self.predicates.values() if p.kind == "idb"]

    def edb_names(self) -> list[str]:
        return [p.name for p in self.predicates.values() if p.kind == "edb"]

    def rules_for(self, pred: str) -> list[Rule]:
        return [r for r in self.rules if r.head.pred == pred]


def expr_vars(expr: Expr) -> set[str]:
    if isinstance(expr, Var):
        return {expr.name}
    if isinstance(expr, Const):
        return set()
    if isinstance(expr, Arith):
        return expr_vars(expr.left) | expr_vars(expr.right)
    return set().union(*(expr_vars(p) for p in expr.parts)) if expr.parts else set()


def literal_atoms(lit: Literal) -> list[tuple[Atom, str]]:
    """Atoms referenced by a literal, tagged positive/negative/aggregate."""
    if isinstance(lit, Pos):
        return [(lit.atom, "positive")]
    if isinstance(lit, Neg):
        return [(lit.atom, "negative")]
    if isinstance(lit, Agg):
        out = []
        for sub in lit.body:
            out.extend((atom, "aggregate") for atom, _ in literal_atoms(sub))
        return out
    return []


def rule_atoms(rule: Rule) -> list[Atom]:
    return [atom for lit in rule.body for atom, _ in literal_atoms(lit)]


def _bound_vars(body: tuple[Literal, ...]) -> set[str]:
    """Variables bindable from positive atoms, binds, and aggregates.

    Position-independent fixpoint: a Bind's variable counts once its inputs
    are bound; an Agg binds its result once its group vars are bound.
    """
    bound: set[str] = set()
    for lit in body:
        if isinstance(lit, Pos):
            bound |= lit.atom.vars()
    changed = True
    while changed:
        changed = False
        for lit in body:
            if isinstance(lit, Bind) and lit.var.name not in bound:
                if expr_vars(lit.expr) <= bound:
                    bound.add(lit.var.name)
                    changed = True
            elif isinstance(lit, Agg) and lit.var.name not in bound:
                if {v.name for v in lit.group_vars} <= bound:
                    bound.add(lit.var.name)
                    changed = True
    return bound


def check_safety(program: DatalogProgram) -> list[str]:
    """Check range restriction; returns diagnostics (empty means safe)."""
    diagnostics: list[str] = []
    for index, rule in enumerate(program.rules):
        label = rule.label(index)
        bound = _bound_vars(rule.body)
        for var in sorted(rule.head.vars() - bound):
            diagnostics.append(f"{label}: head variable {var} is unbound")
        for lit in rule.body:
            if isinstance(lit, Neg):
                for var in sorted(lit.atom.vars() - bound):
                    diagnostics.append(
                        f"{label}: variable {var} appears only in negated atom {lit.atom.pred}"
                    )
            elif isinstance(lit, Cmp):
                for var in sorted((expr_vars(lit.left) | expr_vars(lit.right)) - bound):
                    diagnostics.append(f"{label}: comparison uses unbound variable {var}")
            elif isinstance(lit, Bind):
                for var in sorted(expr_vars(lit.expr) - bound):
                    diagnostics.append(f"{label}: bind input variable {var} is unbound")
            elif isinstance(lit, Agg):
                for gv in lit.group_vars:
                    if gv.name not in bound:
                        diagnostics.append(
                            f"{label}: aggregate group variable {gv.name} is unbound"
                        )
                inner_bound = {v.name for v in lit.group_vars}
                for sub in lit.body:
                    if isinstance(sub, Pos):
                        inner_bound |= sub.atom.vars()
                for term in lit.over:
                    if isinstance(term, Var) and term.name not in inner_bound:
                        diagnostics.append(
                            f"{label}: aggregate projects unbound variable {term.name}"
                        )
    return diagnostics


# Convenience constructor: strings starting with "?" become variables,
# everything else a constant. Used by tests and generated rules.

def atom(pred: str, *terms) -> Atom:
    converted = []
    for t in terms:
        if isinstance(t, (Var, Const)):
            converted.append(t)
        elif isinstance(t, str) and t.startswith("?"):
            converted.append(Var(t[1:]))
        else:
            converted.append(Const(t))
    return Atom(pred, tuple(converted))
