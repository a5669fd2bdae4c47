"""Lowering from typed query modules to Datalog programs.

Each bool function becomes a predicate with one rule per `return true`
path; the rule body is the conjunction of the enclosing for/if/let
conditions. Data-constraint __all__ methods become membership rules for
their derived schema. Method calls become library-predicate atoms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..datalog.ir import (
    Agg,
    Arith,
    Atom,
    Bind,
    Cmp,
    Const,
    DatalogProgram,
    Expr as DExpr,
    Literal,
    Neg,
    Pos,
    Predicate,
    Rule,
    Var,
    expr_vars,
)
from .syntax import (
    BinOp,
    CallCond,
    CmpCond,
    Cond,
    Expr,
    FieldAccess,
    FnDecl,
    ForStmt,
    FreeCall,
    IfStmt,
    InCond,
    IntLit,
    LetStmt,
    MethodCall,
    Module,
    Name,
    ReturnExpr,
    ReturnTrue,
    StaticCall,
    Stmt,
    StrLit,
    YieldStmt,
)
from .types import AGGREGATE_FNS, STRING_METHODS, TypeCatalog, TypedModule

_DB = object()  # sentinel for database-handle values


class LoweringError(Exception):
    pass


@dataclass
class _Path:
    """Immutable-by-copy state along one enclosure path through a body."""

    literals: tuple[Literal, ...] = ()
    env: dict[str, object] = field(default_factory=dict)  # name -> Term | _DB

    def child(self) -> "_Path":
        return _Path(self.literals, dict(self.env))

    def bound_vars(self) -> set[str]:
        bound: set[str] = set()
        for lit in self.literals:
            if isinstance(lit, Pos):
                bound |= lit.atom.vars()
            elif isinstance(lit, (Bind, Agg)):
                bound.add(lit.var.name)
        return bound


class _Lowerer:
    def __init__(self, catalog: TypeCatalog):
        self.catalog = catalog
        self.rules: list[Rule] = []
        self.predicates: dict[str, Predicate] = {}
        self._temp = 0

    def fresh(self, prefix: str = "t") -> Var:
        self._temp += 1
        return Var(f"${prefix}{self._temp}")

    # -- modules and functions

    def lower_module(self, module: Module, label: str = "script") -> None:
        for fn in module.functions:
            if fn.name == "main":
                continue
            sig = self.catalog.functions.get(fn.name)
            if sig is None or sig.decl is None:
                continue
            if sig.ret.kind == "bool":
                self.lower_bool_fn(fn, label)
        for impl in module.impls:
            for method in impl.methods:
                if method.data_constraint and method.name == "__all__":
                    self.lower_all_method(impl.target, method, label)

    def lower_bool_fn(self, fn: FnDecl, label: str) -> None:
        name = fn.name
        if name in self.catalog.tier1:
            raise LoweringError(
                f"function name {name!r} collides with a stored relation"
            )
        head = Atom(name, tuple(Var(p.name) for p in fn.params))
        self.predicates[name] = Predicate(name, len(fn.params), "idb")
        path = _Path(env={p.name: Var(p.name) for p in fn.params})
        emitted = self._walk(fn.body, path, head, f"{label}:{fn.name}", [0])
        if not emitted:
            # A bool function with no return-true path is the empty predicate.
            pass

    def lower_all_method(self, target: str, method: FnDecl, label: str) -> None:
        head_name = target
        self.predicates.setdefault(head_name, Predicate(head_name, 1, "idb"))
        env: dict[str, object] = {method.params[0].name: _DB}
        path = _Path(env=env)
        self._walk(
            method.body, path, Atom(head_name, ()), f"{label}:{target}.__all__", [0],
            yield_target=target,
        )

    # -- statement walking: siblings share the enclosing prefix

    def _walk(
        self,
        stmts: list[Stmt],
        path: _Path,
        head: Atom,
        label: str,
        counter: list[int],
        yield_target: str | None = None,
    ) -> int:
        emitted = 0
        for stmt in stmts:
            if isinstance(stmt, ForStmt):
                child = path.child()
                for var, source in stmt.bindings:
                    self._lower_binding(var, source, child, for_loop=True)
                emitted += self._walk(stmt.body, child, head, label, counter, yield_target)
            elif isinstance(stmt, IfStmt):
                child = path.child()
                for cond in stmt.conds:
                    self._lower_cond(cond, child)
                emitted += self._walk(stmt.body, child, head, label, counter, yield_target)
            elif isinstance(stmt, LetStmt):
                child = path.child()
                for var, value in stmt.bindings:
                    result = self._lower_expr(value, child, target=var)
                    child.env[var] = result
                emitted += self._walk(stmt.body, child, head, label, counter, yield_target)
            elif isinstance(stmt, ReturnTrue):
                counter[0] += 1
                self.rules.append(
                    Rule(head, path.literals, provenance=f"{label} rule {counter[0]}")
                )
                emitted += 1
            elif isinstance(stmt, YieldStmt):
                if yield_target is None:
                    raise LoweringError(f"{label}: stray yield")
                child = path.child()
                id_term = None
                for fname, value in stmt.fields:
                    term = self._as_term(self._lower_expr(value, child), child)
                    if fname == "id":
                        id_term = term
                if id_term is None:
                    raise LoweringError(f"{label}: yield without id field")
                counter[0] += 1
                self.rules.append(
                    Rule(
                        Atom(yield_target, (id_term,)),
                        child.literals,
                        provenance=f"{label} rule {counter[0]}",
                    )
                )
                emitted += 1
            elif isinstance(stmt, ReturnExpr):
                raise LoweringError(f"{label}: return <expr> in a lowered body")
            else:
                raise LoweringError(f"{label}: unsupported statement")
        return emitted

    # -- bindings (for loops and `in` conditions)

    def _lower_binding(self, var: str, source: Expr, path: _Path, for_loop: bool) -> None:
        existing = path.env.get(var)
        if existing is None:
            term = Var(var)
            path.env[var] = term
        else:
            term = existing
        self._constrain_membership(term, source, path, add_element_membership=for_loop)

    def _constrain_membership(
        self, term, source: Expr, path: _Path, add_element_membership: bool
    ) -> None:
        if isinstance(source, FreeCall) and source.name in self.catalog.schemas:
            path.literals += (Pos(Atom(source.name, (term,))),)
            return
        if isinstance(source, MethodCall):
            sig = self._method_sig(source)
            recv = self._as_term(self._lower_expr(source.recv, path), path)
            path.literals += (Pos(Atom(sig.pred, (recv, term))),)
            if add_element_membership and sig.ret.kind == "schema":
                path.literals += (Pos(Atom(sig.ret.name, (term,))),)
            return
        raise LoweringError("for/in source must be a schema set or method call")

    def _method_sig(self, call: MethodCall):
        recv_ty = call.recv.ty
        if recv_ty is None or recv_ty.kind != "schema":
            raise LoweringError(f"method call on non-schema value: {call.name}")
        sig = self.catalog.resolve_method(recv_ty.name, call.name)
        if sig is None:
            raise LoweringError(f"unresolved method {recv_ty.name}.{call.name}")
        return sig

    # -- conditions

    def _lower_cond(self, cond: Cond, path: _Path) -> None:
        if isinstance(cond, CmpCond):
            self._lower_cmp(cond, path)
        elif isinstance(cond, CallCond):
            self._lower_call_cond(cond, path)
        elif isinstance(cond, InCond):
            if isinstance(cond.left, Name) and cond.left.ident not in path.env:
                self._lower_binding(cond.left.ident, cond.source, path, for_loop=False)
            else:
                term = self._as_term(self._lower_expr(cond.left, path), path)
                self._constrain_membership(term, cond.source, path, False)
        else:
            raise LoweringError("unsupported condition")

    def _lower_cmp(self, cond: CmpCond, path: _Path) -> None:
        if cond.op == "=":
            bound = path.bound_vars()
            left_unbound = (
                isinstance(cond.left, Name)
                and isinstance(path.env.get(cond.left.ident), Var)
                and path.env[cond.left.ident].name not in bound
            )
            right_unbound = (
                isinstance(cond.right, Name)
                and isinstance(path.env.get(cond.right.ident), Var)
                and path.env[cond.right.ident].name not in bound
            )
            if left_unbound and not right_unbound:
                self._unify_into(cond.left.ident, cond.right, path)
                return
            if right_unbound and not left_unbound:
                self._unify_into(cond.right.ident, cond.left, path)
                return
        left = self._lower_expr(cond.left, path)
        right = self._lower_expr(cond.right, path)
        op = "!=" if cond.op == "!=" else cond.op
        path.literals += (Cmp(op, self._as_dexpr(left), self._as_dexpr(right)),)

    def _unify_into(self, var_name: str, value: Expr, path: _Path) -> None:
        """Bind an unbound variable to the value of an expression."""
        result = self._lower_expr(value, path, target=var_name)
        if isinstance(result, Var) and result.name == var_name:
            return
        path.literals += (Bind(Var(var_name), self._as_dexpr(result)),)

    def _lower_call_cond(self, cond: CallCond, path: _Path) -> None:
        call = cond.call
        if isinstance(call, MethodCall):
            if call.name == "key_eq":
                recv = self._as_term(self._lower_expr(call.recv, path), path)
                arg = self._as_term(self._lower_expr(call.args[0], path), path)
                path.literals += (Cmp("!=" if cond.negated else "=", recv, arg),)
                return
            if call.name in STRING_METHODS and call.recv.ty is not None and call.recv.ty.kind == "string":
                if cond.negated:
                    raise LoweringError(f"negated string condition {call.name} is not supported")
                recv = self._lower_expr(call.recv, path)
                arg = self._lower_expr(call.args[0], path)
                path.literals += (
                    Cmp(STRING_METHODS[call.name], self._as_dexpr(recv), self._as_dexpr(arg)),
                )
                return
            raise LoweringError(f"method {call.name} is not a condition")
        if isinstance(call, FreeCall):
            sig = self.catalog.functions.get(call.name)
            if sig is None:
                raise LoweringError(f"unknown predicate {call.name}")
            pred = sig.builtin_pred or call.name
            terms = tuple(
                self._as_term(self._lower_expr(a, path), path) for a in call.args
            )
            atom = Atom(pred, terms)
            path.literals += ((Neg(atom) if cond.negated else Pos(atom)),)
            return
        raise LoweringError("unsupported predicate condition")

    # -- expressions

    def _lower_expr(self, expr: Expr, path: _Path, target: str | None = None):
        if isinstance(expr, IntLit):
            return Const(expr.value)
        if isinstance(expr, StrLit):
            return Const(expr.value)
        if isinstance(expr, Name):
            value = path.env.get(expr.ident)
            if value is None:
                raise LoweringError(f"unknown variable {expr.ident} during lowering")
            return value
        if isinstance(expr, BinOp):
            left = self._as_dexpr(self._lower_expr(expr.left, path))
            right = self._as_dexpr(self._lower_expr(expr.right, path))
            return Arith(expr.op, left, right)
        if isinstance(expr, FieldAccess):
            return self._lower_field(expr, path, target)
        if isinstance(expr, MethodCall):
            sig = self._method_sig(expr)
            recv = self._as_term(self._lower_expr(expr.recv, path), path)
            out = Var(target) if target else self.fresh()
            path.literals += (Pos(Atom(sig.pred, (recv, out))),)
            return out
        if isinstance(expr, StaticCall):
            return _DB
        if isinstance(expr, FreeCall):
            if expr.name in AGGREGATE_FNS:
                return self._lower_aggregate(expr, path, target)
            sig = self.catalog.functions.get(expr.name)
            if sig is None:
                raise LoweringError(f"unknown function {expr.name} during lowering")
            if sig.ret.kind == "db":
                return _DB
            raise LoweringError(f"call to {expr.name} is not a value expression")
        raise LoweringError("unsupported expression during lowering")

    def _lower_field(self, expr: FieldAccess, path: _Path, target: str | None):
        recv_ty = expr.recv.ty
        info = self.catalog.schemas[recv_ty.name]
        root = self.catalog.schemas[info.root]
        col = root.field_cols[expr.name]
        recv = self._as_term(self._lower_expr(expr.recv, path), path)
        if col == 0:
            return recv
        relation = self.catalog.tier1[root.backing]
        out = Var(target) if target else self.fresh()
        terms = []
        for i in range(relation.arity):
            if i == 0:
                terms.append(recv)
            elif i == col:
                terms.append(out)
            else:
                terms.append(self.fresh("a"))
        path.literals += (Pos(Atom(root.backing, tuple(terms))),)
        return out

    def _lower_aggregate(self, expr: FreeCall, path: _Path, target: str | None):
        sub = _Path(literals=(), env=dict(path.env))
        result = self._lower_expr(expr.args[0], sub)
        over = self._as_term(result, sub)
        outer_bound = path.bound_vars()
        used: set[str] = set()
        for lit in sub.literals:
            if isinstance(lit, Pos):
                used |= lit.atom.vars()
            elif isinstance(lit, Cmp):
                used |= expr_vars(lit.left) | expr_vars(lit.right)
            elif isinstance(lit, Bind):
                used |= expr_vars(lit.expr)
        if isinstance(over, Var):
            used.add(over.name)
        groups = tuple(Var(v) for v in sorted(used & outer_bound))
        out = Var(target) if target else self.fresh()
        path.literals += (Agg(out, expr.name, groups, (over,), sub.literals),)
        return out

    def _as_term(self, value, path: _Path):
        if value is _DB:
            raise LoweringError("database handle used as a value")
        if isinstance(value, (Var, Const)):
            return value
        temp = self.fresh()
        path.literals += (Bind(temp, value),)
        return temp

    def _as_dexpr(self, value) -> DExpr:
        if value is _DB:
            raise LoweringError("database handle used as a value")
        return value


def lower(typed: TypedModule) -> DatalogProgram:
    """Lower a typechecked script to a complete, validated program."""
    catalog = typed.catalog
    lowerer = _Lowerer(catalog)
    for index, lib in enumerate(catalog.library_modules):
        lowerer.lower_module(lib, label=f"lib{index}")
    lowerer.lower_module(typed.module, label="script")

    predicates: dict[str, Predicate] = dict(catalog.edb_predicates())
    for name, pred in catalog.builtin_predicates.items():
        predicates[name] = pred
    for name, pred in lowerer.predicates.items():
        existing = predicates.get(name)
        if existing is not None and existing.kind == "edb":
            raise LoweringError(f"predicate {name!r} collides with a stored relation")
        predicates[name] = pred

    output_columns = {}
    for name in typed.outputs:
        sig = catalog.functions[name]
        output_columns[name] = tuple(p for p, _ in sig.params)

    program = DatalogProgram(
        predicates=predicates,
        rules=list(catalog.builtin_rules) + lowerer.rules,
        outputs=list(dict.fromkeys(typed.outputs)),
        output_columns=output_columns,
    )
    program.validate()
    return program
