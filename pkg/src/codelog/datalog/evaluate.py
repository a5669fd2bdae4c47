"""Fixpoint evaluation: a plain naive oracle and the semi-naive engine.

The naive evaluator is deliberately dumb (snapshot reads, full rule
re-application, no indexes) so it can serve as an independent oracle for
the semi-naive path, which joins deltas against totals with ad-hoc hash
indexes, one strongly connected component at a time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

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
    EvalError,
    Expr,
    Literal,
    Neg,
    Pos,
    Rule,
    Var,
    check_safety,
    expr_vars,
)
from .stratify import Stratification, stratify

Subst = dict[str, int | str]
RelMap = dict[str, set[tuple]]


@dataclass
class EvalStats:
    """Counters recorded during one evaluation run."""

    iterations: dict[str, int] = field(default_factory=dict)
    intermediate_tuples: int = 0
    derived: dict[str, int] = field(default_factory=dict)
    stages_executed: int = 0


def _as_tuple_set(rel) -> set[tuple]:
    tuples = getattr(rel, "tuples", rel)
    return set(tuples)


def _init_relations(program: DatalogProgram, edb: dict) -> RelMap:
    rels: RelMap = {}
    for pred in program.predicates.values():
        if pred.kind == "edb":
            rows = _as_tuple_set(edb[pred.name]) if pred.name in edb else set()
            for row in rows:
                if len(row) != pred.arity:
                    raise EvalError(
                        f"EDB relation {pred.name}: tuple of arity {len(row)}, "
                        f"declared {pred.arity}"
                    )
            rels[pred.name] = rows
        else:
            rels[pred.name] = set()
    return rels


def eval_expr(expr: Expr, subst: Subst, label: str):
    if isinstance(expr, Var):
        try:
            return subst[expr.name]
        except KeyError:
            raise EvalError(f"{label}: unbound variable {expr.name} at execution time") from None
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Arith):
        left = eval_expr(expr.left, subst, label)
        right = eval_expr(expr.right, subst, label)
        if not isinstance(left, int) or not isinstance(right, int):
            raise EvalError(f"{label}: arithmetic over non-integer values")
        if expr.op == "+":
            return left + right
        if expr.op == "-":
            return left - right
        if expr.op == "*":
            return left * right
        if expr.op == "/":
            if right == 0:
                raise EvalError(f"{label}: division by zero")
            q = abs(left) // abs(right)
            return q if (left >= 0) == (right >= 0) else -q
        raise EvalError(f"{label}: unknown arithmetic op {expr.op}")
    if isinstance(expr, Concat):
        parts = []
        for p in expr.parts:
            v = eval_expr(p, subst, label)
            parts.append(str(v) if isinstance(v, int) else v)
        return "".join(parts)
    raise EvalError(f"{label}: unknown expression {expr!r}")


def _eval_cmp(op: str, left, right, label: str) -> bool:
    if op == "=":
        return left == right
    if op == "!=":
        return left != right
    if op in ("<", "<=", ">", ">="):
        if isinstance(left, int) != isinstance(right, int):
            raise EvalError(f"{label}: ordered comparison across int and str")
        if op == "<":
            return left < right
        if op == "<=":
            return left <= right
        if op == ">":
            return left > right
        return left >= right
    if op in ("starts_with", "ends_with", "contains", "name_match"):
        if not isinstance(left, str) or not isinstance(right, str):
            raise EvalError(f"{label}: string comparison over non-string values")
        if op == "starts_with":
            return left.startswith(right)
        if op == "ends_with":
            return left.endswith(right)
        if op == "contains":
            return right in left
        return left == right or left.endswith("." + right)
    raise EvalError(f"{label}: unknown comparison op {op}")


def _match(terms: tuple, row: tuple, subst: Subst) -> Subst | None:
    ext: dict | None = None
    for t, v in zip(terms, row):
        if isinstance(t, Const):
            if t.value != v:
                return None
        else:
            if t.name in subst:
                if subst[t.name] != v:
                    return None
            elif ext is not None and t.name in ext:
                if ext[t.name] != v:
                    return None
            else:
                if ext is None:
                    ext = {}
                ext[t.name] = v
    if not ext:
        return subst
    merged = dict(subst)
    merged.update(ext)
    return merged


def _scan_atom(terms: tuple, rel, substs: list[Subst]) -> list[Subst]:
    """Nested-loop scan of one atom against every substitution.

    The hot path of the naive evaluator: constant and bound-variable
    positions are compiled to flat (position, value) checks per
    substitution so the per-row work is plain tuple indexing.
    """
    const_checks = []
    var_first: dict[str, int] = {}
    dup_checks = []  # same variable twice in one atom
    for i, t in enumerate(terms):
        if isinstance(t, Const):
            const_checks.append((i, t.value))
        elif t.name in var_first:
            dup_checks.append((i, var_first[t.name]))
        else:
            var_first[t.name] = i
    out: list[Subst] = []
    for s in substs:
        checks = list(const_checks)
        frees = []
        for name, i in var_first.items():
            if name in s:
                checks.append((i, s[name]))
            else:
                frees.append((name, i))
        for row in rel:
            ok = True
            for i, v in checks:
                if row[i] != v:
                    ok = False
                    break
            if not ok:
                continue
            for i, j in dup_checks:
                if row[i] != row[j]:
                    ok = False
                    break
            if not ok:
                continue
            if frees:
                s2 = dict(s)
                for name, i in frees:
                    s2[name] = row[i]
                out.append(s2)
            else:
                out.append(s)
    return out


def _instantiate(head: Atom, subst: Subst, label: str) -> tuple:
    out = []
    for t in head.terms:
        if isinstance(t, Const):
            out.append(t.value)
        else:
            try:
                out.append(subst[t.name])
            except KeyError:
                raise EvalError(f"{label}: head variable {t.name} unbound") from None
    return tuple(out)


def _literal_ready(lit: Literal, bound: set[str]) -> bool:
    if isinstance(lit, Pos):
        return True
    if isinstance(lit, Neg):
        return lit.atom.vars() <= bound
    if isinstance(lit, Cmp):
        return (expr_vars(lit.left) | expr_vars(lit.right)) <= bound
    if isinstance(lit, Bind):
        return expr_vars(lit.expr) <= bound
    if isinstance(lit, Agg):
        return {v.name for v in lit.group_vars} <= bound
    return False


def _literal_binds(lit: Literal) -> set[str]:
    if isinstance(lit, Pos):
        return lit.atom.vars()
    if isinstance(lit, (Bind, Agg)):
        return {lit.var.name}
    return set()


def order_body_executable(body: tuple[Literal, ...], initially_bound: set[str] = frozenset()):
    """Reorder only as much as executability demands.

    Keeps the given order but defers filters and binds until their inputs
    are bound. Raises if no executable order exists (an unsafe rule).
    """
    ordered: list[Literal] = []
    bound = set(initially_bound)
    remaining = list(body)
    while remaining:
        picked = None
        for lit in remaining:
            if _literal_ready(lit, bound):
                picked = lit
                break
        if picked is None:
            raise EvalError("rule body has no executable order (unsafe rule)")
        remaining.remove(picked)
        ordered.append(picked)
        bound |= _literal_binds(picked)
    return ordered


class _Indexes:
    """Per-pass hash indexes over relation sets, keyed by bound positions."""

    def __init__(self):
        self._cache: dict = {}

    def probe(self, tag, name: str, rel: set[tuple], positions: tuple[int, ...], key: tuple):
        if not positions:
            return rel
        cache_key = (tag, name, positions)
        index = self._cache.get(cache_key)
        if index is None:
            index = {}
            for row in rel:
                k = tuple(row[i] for i in positions)
                index.setdefault(k, []).append(row)
            self._cache[cache_key] = index
        return index.get(key, ())


def _eval_body(
    ordered: list[Literal],
    get_rel,
    subst0: Subst,
    label: str,
    stats: EvalStats | None = None,
    indexes: _Indexes | None = None,
    delta_at: int | None = None,
    get_delta=None,
) -> list[Subst]:
    """Extend subst0 through the ordered body; returns satisfying substs."""
    substs = [subst0]
    for pos_index, lit in enumerate(ordered):
        if not substs:
            return []
        if isinstance(lit, Pos):
            use_delta = delta_at is not None and pos_index == delta_at
            rel = get_delta(lit.atom.pred) if use_delta else get_rel(lit.atom.pred)
            new: list[Subst] = []
            terms = lit.atom.terms
            if indexes is not None:
                bound_positions = tuple(
                    i
                    for i, t in enumerate(terms)
                    if isinstance(t, Const) or (isinstance(t, Var) and t.name in substs[0])
                )
                tag = "d" if use_delta else "t"
                for s in substs:
                    key = tuple(
                        terms[i].value if isinstance(terms[i], Const) else s[terms[i].name]
                        for i in bound_positions
                    )
                    for row in indexes.probe(tag, lit.atom.pred, rel, bound_positions, key):
                        m = _match(terms, row, s)
                        if m is not None:
                            new.append(m)
            else:
                new = _scan_atom(terms, rel, substs)
            if stats is not None:
                stats.intermediate_tuples += len(new)
            substs = new
        elif isinstance(lit, Neg):
            rel = get_rel(lit.atom.pred)
            terms = lit.atom.terms
            substs = [s for s in substs if not any(_match(terms, row, s) for row in rel)]
        elif isinstance(lit, Cmp):
            kept = []
            for s in substs:
                left = eval_expr(lit.left, s, label)
                right = eval_expr(lit.right, s, label)
                if _eval_cmp(lit.op, left, right, label):
                    kept.append(s)
            substs = kept
        elif isinstance(lit, Bind):
            new = []
            for s in substs:
                value = eval_expr(lit.expr, s, label)
                if lit.var.name in s:
                    if s[lit.var.name] == value:
                        new.append(s)
                else:
                    s2 = dict(s)
                    s2[lit.var.name] = value
                    new.append(s2)
            substs = new
        elif isinstance(lit, Agg):
            inner = order_body_executable(lit.body, {v.name for v in lit.group_vars})
            new = []
            for s in substs:
                seed = {v.name: s[v.name] for v in lit.group_vars}
                sub = _eval_body(inner, get_rel, seed, label, stats, indexes)
                projected = set()
                for m in sub:
                    projected.add(
                        tuple(
                            t.value if isinstance(t, Const) else m[t.name] for t in lit.over
                        )
                    )
                value = _aggregate(lit.fn, projected, label)
                if value is None:
                    continue
                if lit.var.name in s:
                    if s[lit.var.name] == value:
                        new.append(s)
                else:
                    s2 = dict(s)
                    s2[lit.var.name] = value
                    new.append(s2)
            substs = new
        else:
            raise EvalError(f"{label}: unknown literal {lit!r}")
    return substs


def _aggregate(fn: str, tuples: set[tuple], label: str):
    if fn == "count":
        return len(tuples)
    if not tuples:
        return None  # sum/min/max over an empty group yields no tuple
    values = [t[0] for t in tuples]
    for v in values:
        if not isinstance(v, int):
            raise EvalError(f"{label}: {fn} over non-integer values")
    if fn == "sum":
        return sum(values)
    if fn == "min":
        return min(values)
    if fn == "max":
        return max(values)
    raise EvalError(f"{label}: unknown aggregate {fn}")


def _checked(program: DatalogProgram) -> Stratification:
    program.validate()
    diagnostics = check_safety(program)
    if diagnostics:
        raise DatalogError("unsafe program: " + "; ".join(diagnostics))
    return stratify(program)


def evaluate_naive(program: DatalogProgram, edb: dict) -> RelMap:
    """Reference oracle: full re-application with snapshot reads."""
    strat = _checked(program)
    rels = _init_relations(program, edb)
    for stratum in strat.strata:
        members = set(stratum)
        rules = [r for r in program.rules if r.head.pred in members]
        changed = True
        while changed:
            changed = False
            snapshot = {name: set(rels[name]) for name in members}

            def get(name, _snap=snapshot):
                return _snap.get(name, rels[name])

            for index, rule in enumerate(rules):
                label = rule.label(index)
                ordered = order_body_executable(rule.body)
                target = rels[rule.head.pred]
                for s in _eval_body(ordered, get, {}, label):
                    row = _instantiate(rule.head, s, label)
                    if row not in target:
                        target.add(row)
                        changed = True
    return {name: rels[name] for name in program.idb_names()}


def apply_rule(
    rule: Rule,
    totals: dict,
    deltas: dict,
    delta_atom: int | None = None,
    stats: EvalStats | None = None,
    indexes: _Indexes | None = None,
) -> set[tuple]:
    """One semi-naive step: join the designated atom's delta against totals.

    Returns head tuples not already present in totals[head]. When
    delta_atom is None the first positive atom with a delta is designated.
    """
    totals_map = {k: _as_tuple_set(v) if not isinstance(v, set) else v for k, v in totals.items()}
    deltas_map = {k: _as_tuple_set(v) if not isinstance(v, set) else v for k, v in deltas.items()}
    ordered = order_body_executable(rule.body)
    if delta_atom is None:
        for i, lit in enumerate(ordered):
            if isinstance(lit, Pos) and lit.atom.pred in deltas_map:
                delta_atom = i
                break
    label = rule.label()

    def get_total(name):
        return totals_map.get(name, set())

    def get_delta(name):
        return deltas_map.get(name, set())

    existing = totals_map.get(rule.head.pred, set())
    out: set[tuple] = set()
    for s in _eval_body(
        ordered, get_total, {}, label, stats, indexes, delta_at=delta_atom, get_delta=get_delta
    ):
        row = _instantiate(rule.head, s, label)
        if row not in existing:
            out.add(row)
    return out


def evaluate_seminaive(
    program: DatalogProgram,
    edb: dict,
    stage_hook=None,
    stats: EvalStats | None = None,
) -> RelMap:
    """Production path: stratum by stratum, SCC by SCC, delta joins.

    stage_hook(stage_index, predicates) fires before each stratum starts;
    raising from it aborts evaluation at that stage boundary.
    """
    strat = _checked(program)
    rels = _init_relations(program, edb)
    scc_topo = strat.sccs

    for stage_index, stratum in enumerate(strat.strata):
        if stage_hook is not None:
            stage_hook(stage_index, list(stratum))
        members = set(stratum)
        for comp in scc_topo:
            if comp[0] not in members:
                continue
            comp_set = set(comp)
            rules = [r for r in program.rules if r.head.pred in comp_set]
            iterations = _eval_scc(program, rules, comp_set, rels, stats)
            if stats is not None:
                for name in comp:
                    stats.iterations[name] = iterations
        if stats is not None:
            stats.stages_executed += 1

    result = {name: rels[name] for name in program.idb_names()}
    if stats is not None:
        for name, rows in result.items():
            stats.derived[name] = len(rows)
    return result


def _recursive_positions(rule: Rule, comp: set[str]) -> list[int]:
    ordered = order_body_executable(rule.body)
    return [
        i for i, lit in enumerate(ordered) if isinstance(lit, Pos) and lit.atom.pred in comp
    ]


def _eval_scc(
    program: DatalogProgram,
    rules: list[Rule],
    comp: set[str],
    rels: RelMap,
    stats: EvalStats | None,
) -> int:
    def get(name):
        return rels[name]

    # Seed pass: full application of every rule against current totals.
    indexes = _Indexes()
    delta: dict[str, set[tuple]] = {name: set() for name in comp}
    for index, rule in enumerate(rules):
        label = rule.label(index)
        ordered = order_body_executable(rule.body)
        target = rels[rule.head.pred]
        for s in _eval_body(ordered, get, {}, label, stats, indexes):
            row = _instantiate(rule.head, s, label)
            if row not in target:
                delta[rule.head.pred].add(row)
    for name in comp:
        rels[name] |= delta[name]
    iterations = 1

    recursive = [(r, _recursive_positions(r, comp)) for r in rules]
    recursive = [(r, ps) for r, ps in recursive if ps]
    if not recursive:
        return iterations

    while any(delta.values()):
        iterations += 1
        indexes = _Indexes()
        new_delta: dict[str, set[tuple]] = {name: set() for name in comp}

        def get_delta(name):
            return delta.get(name, set())

        for rule, positions in recursive:
            label = rule.label()
            ordered = order_body_executable(rule.body)
            target = rels[rule.head.pred]
            for pos in positions:
                pred = ordered[pos].atom.pred
                if not delta.get(pred):
                    continue
                for s in _eval_body(
                    ordered, get, {}, label, stats, indexes,
                    delta_at=pos, get_delta=get_delta,
                ):
                    row = _instantiate(rule.head, s, label)
                    if row not in target and row not in new_delta[rule.head.pred]:
                        new_delta[rule.head.pred].add(row)
        for name in comp:
            rels[name] |= new_delta[name]
        delta = new_delta
    return iterations
