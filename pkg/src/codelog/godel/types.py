"""Type catalog and type checker for the query language.

Values are ints, strings, schema instances (identified by node id), and
database handles. Schema inheritance is nominal; methods resolve through
the parent chain. The checker annotates expressions in place and returns a
TypedModule whose catalog view includes script-declared schemas/functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..datalog.ir import Predicate, Rule
from ..facts import RelationSchema
from .syntax import (
    BinOp,
    CallCond,
    CmpCond,
    Cond,
    Diagnostic,
    Expr,
    ExprStmt,
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
    SchemaDecl,
    StaticCall,
    Stmt,
    StrLit,
    TypeExpr,
    YieldStmt,
)


class TypeError_(Exception):
    """Type diagnostics; trailing underscore avoids the builtin."""

    def __init__(self, diagnostics: list[Diagnostic]):
        super().__init__("; ".join(str(d) for d in diagnostics))
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class Ty:
    kind: str  # int | string | bool | db | schema | set
    name: str = ""

    def __str__(self) -> str:
        if self.kind == "schema":
            return self.name
        if self.kind == "set":
            return f"*{self.name}"
        if self.kind == "db":
            return self.name
        return self.kind


TY_INT = Ty("int")
TY_STR = Ty("string")
TY_BOOL = Ty("bool")

AGGREGATE_FNS = ("count", "sum", "min", "max")
STRING_METHODS = {"startsWith": "starts_with", "endsWith": "ends_with", "contains": "contains"}


@dataclass
class SchemaInfo:
    name: str
    parent: str | None
    fields: list[tuple[str, Ty]]  # full field list, inherited included
    root: str  # base ancestor bound to a Tier-1 relation
    backing: str | None = None  # Tier-1 relation name (root schemas only)
    field_cols: dict[str, int] = field(default_factory=dict)  # field -> backing column


@dataclass
class MethodSig:
    schema: str
    name: str
    ret: Ty
    multi: bool = False  # relationally multi-valued (documentation only)

    @property
    def pred(self) -> str:
        return f"{self.schema}.{self.name}"


@dataclass
class FnSig:
    name: str
    params: list[tuple[str, Ty]]
    ret: Ty
    decl: FnDecl | None = None
    builtin_pred: str = ""  # EDB-backed builtins such as changed_file


@dataclass
class TypeCatalog:
    language: str
    db_type: str
    tier1: dict[str, RelationSchema]
    schemas: dict[str, SchemaInfo] = field(default_factory=dict)
    methods: dict[tuple[str, str], MethodSig] = field(default_factory=dict)
    functions: dict[str, FnSig] = field(default_factory=dict)
    builtin_rules: list[Rule] = field(default_factory=list)
    builtin_predicates: dict[str, Predicate] = field(default_factory=dict)
    library_modules: list[Module] = field(default_factory=list)

    def clone(self) -> "TypeCatalog":
        return TypeCatalog(
            language=self.language,
            db_type=self.db_type,
            tier1=dict(self.tier1),
            schemas=dict(self.schemas),
            methods=dict(self.methods),
            functions=dict(self.functions),
            builtin_rules=list(self.builtin_rules),
            builtin_predicates=dict(self.builtin_predicates),
            library_modules=list(self.library_modules),
        )

    def resolve_method(self, schema: str, name: str) -> MethodSig | None:
        current: str | None = schema
        while current is not None:
            sig = self.methods.get((current, name))
            if sig is not None:
                return sig
            info = self.schemas.get(current)
            current = info.parent if info else None
        return None

    def schema_root(self, name: str) -> str:
        info = self.schemas[name]
        return info.root

    def compatible_schemas(self, a: str, b: str) -> bool:
        """True when one is an ancestor of the other."""
        return self._is_ancestor(a, b) or self._is_ancestor(b, a)

    def _is_ancestor(self, anc: str, desc: str) -> bool:
        current: str | None = desc
        while current is not None:
            if current == anc:
                return True
            info = self.schemas.get(current)
            current = info.parent if info else None
        return False

    def edb_predicates(self) -> dict[str, Predicate]:
        return {
            name: Predicate(name, schema.arity, "edb")
            for name, schema in self.tier1.items()
        }


@dataclass
class TypedModule:
    module: Module
    catalog: TypeCatalog  # script-extended view
    outputs: list[str]
    is_library: bool = False


class _Checker:
    def __init__(self, catalog: TypeCatalog, is_library: bool):
        self.catalog = catalog
        self.is_library = is_library
        self.diagnostics: list[Diagnostic] = []
        self.outputs: list[str] = []
        self._db_eval_stack: list[str] = []

    def report(self, node, message: str) -> None:
        self.diagnostics.append(Diagnostic(node.line, node.col, message))

    # -- module level

    def run(self, module: Module) -> None:
        if not self.is_library:
            if module.main is None:
                self.diagnostics.append(
                    Diagnostic(0, 0, "script has no main function")
                )
            for use in module.uses:
                parts = use.split("::")
                if parts[0] != "coref" or len(parts) < 2:
                    self.diagnostics.append(
                        Diagnostic(0, 0, f"unknown library path {use!r}")
                    )
                elif parts[1] != self.catalog.language:
                    self.diagnostics.append(
                        Diagnostic(
                            0, 0,
                            f"library {use!r} does not match subject language "
                            f"{self.catalog.language!r}",
                        )
                    )
        for schema in module.schemas:
            self.declare_schema(schema)
        impl_methods: list[tuple[str, FnDecl]] = []
        for impl in module.impls:
            if impl.target not in self.catalog.schemas:
                self.report(impl, f"impl target {impl.target!r} is not a known schema")
                continue
            for method in impl.methods:
                impl_methods.append((impl.target, method))
        for fn in module.functions:
            self.declare_function(fn)
        for fn in module.functions:
            if fn.name == "main":
                self.check_main(fn)
            else:
                self.check_function(fn)
        for target, method in impl_methods:
            self.check_impl_method(target, method)

    def declare_schema(self, decl: SchemaDecl) -> None:
        existing = self.catalog.schemas.get(decl.name)
        if existing is not None:
            # Library files restate the engine-bound base schemas; the
            # declaration must agree with the binding.
            if self.is_library and existing.backing is not None and decl.extends is None:
                declared = [(n, self.resolve_type(t)) for n, t in decl.fields]
                if declared != existing.fields:
                    self.report(
                        decl,
                        f"schema {decl.name!r} does not match its stored binding",
                    )
                return
            self.report(decl, f"schema {decl.name!r} is already defined")
            return
        if decl.extends is None:
            self.report(
                decl,
                f"schema {decl.name!r} must extend a library schema "
                "(root schemas are library-defined)",
            )
            return
        parent = self.catalog.schemas.get(decl.extends)
        if parent is None:
            self.report(decl, f"unknown parent schema {decl.extends!r}")
            return
        if decl.fields:
            self.report(
                decl,
                f"schema {decl.name!r}: extending schemas may not declare new fields",
            )
            return
        self.catalog.schemas[decl.name] = SchemaInfo(
            name=decl.name,
            parent=parent.name,
            fields=list(parent.fields),
            root=parent.root,
        )

    def resolve_type(self, t: TypeExpr) -> Ty | None:
        if t.is_set:
            if t.name in self.catalog.schemas:
                return Ty("set", t.name)
            return None
        if t.name == "int":
            return TY_INT
        if t.name == "string":
            return TY_STR
        if t.name == "bool":
            return TY_BOOL
        if t.name == self.catalog.db_type:
            return Ty("db", t.name)
        if t.name in self.catalog.schemas:
            return Ty("schema", t.name)
        return None

    def declare_function(self, fn: FnDecl) -> None:
        if fn.name == "main":
            return
        if fn.name in self.catalog.functions or fn.name in self.catalog.schemas:
            self.report(fn, f"function {fn.name!r} conflicts with an existing name")
            return
        params: list[tuple[str, Ty]] = []
        for p in fn.params:
            ty = self.resolve_type(p.type)
            if ty is None:
                self.report(p, f"unknown type {p.type.name!r} for parameter {p.name}")
                ty = TY_INT
            elif ty.kind == "db":
                self.report(p, "db-typed parameters are only allowed on __all__")
            params.append((p.name, ty))
        if fn.ret is None:
            self.report(fn, f"function {fn.name!r} needs a return type")
            ret = TY_BOOL
        else:
            ret = self.resolve_type(fn.ret)
            if ret is None:
                self.report(fn, f"unknown return type {fn.ret.name!r}")
                ret = TY_BOOL
        self.catalog.functions[fn.name] = FnSig(fn.name, params, ret, decl=fn)

    # -- function bodies

    def check_function(self, fn: FnDecl) -> None:
        sig = self.catalog.functions.get(fn.name)
        if sig is None:
            return
        if sig.ret == TY_BOOL:
            env = dict(sig.params)
            self.check_block(fn.body, env, fn, allow_yield=None)
            if self._contains_return_expr(fn.body):
                self.report(fn, f"bool function {fn.name!r} may only 'return true'")
        elif sig.ret.kind in ("db", "int", "string"):
            if sig.params:
                self.report(fn, f"{sig.ret}-returning function {fn.name!r} takes no parameters")
            if len(fn.body) != 1 or not isinstance(fn.body[0], ReturnExpr):
                self.report(
                    fn, f"function {fn.name!r} must be a single 'return <expr>'"
                )
                return
            value_ty = self.check_expr(fn.body[0].value, {})
            if value_ty is not None and value_ty != sig.ret:
                self.report(
                    fn.body[0], f"return type mismatch: {value_ty} vs declared {sig.ret}"
                )
        elif sig.ret.kind == "set":
            self.report(fn, "set-returning functions are only allowed as __all__ methods")

    def check_impl_method(self, target: str, method: FnDecl) -> None:
        if method.name != "__all__" or not method.data_constraint:
            self.report(
                method,
                "impl blocks support only the @data_constraint __all__ method",
            )
            return
        info = self.catalog.schemas[target]
        if info.backing is not None:
            self.report(method, f"schema {target!r} is library-backed; __all__ not allowed")
            return
        if len(method.params) != 1:
            self.report(method, "__all__ takes exactly one db parameter")
            return
        db_param = method.params[0]
        db_ty = self.resolve_type(db_param.type)
        if db_ty is None or db_ty.kind != "db":
            self.report(db_param, f"__all__ parameter must be {self.catalog.db_type}")
            return
        if (
            method.ret is None
            or not method.ret.is_set
            or method.ret.name != target
        ):
            self.report(method, f"__all__ must return *{target}")
            return
        env = {db_param.name: db_ty}
        self.check_block(method.body, env, method, allow_yield=target)

    def check_main(self, fn: FnDecl) -> None:
        if self.is_library:
            self.report(fn, "library modules may not define main")
            return
        if fn.params or fn.ret is not None:
            self.report(fn, "main takes no parameters and has no return type")
        for stmt in fn.body:
            call = stmt.call if isinstance(stmt, ExprStmt) else None
            if not isinstance(call, FreeCall) or call.name != "output":
                self.report(stmt, "main may contain only output(...) calls")
                continue
            if len(call.args) != 1 or not isinstance(call.args[0], FreeCall):
                self.report(call, "output takes a single function call, e.g. output(f())")
                continue
            inner = call.args[0]
            sig = self.catalog.functions.get(inner.name)
            if sig is None or sig.decl is None:
                self.report(inner, f"unknown query function {inner.name!r}")
                continue
            if sig.ret != TY_BOOL:
                self.report(inner, f"output expects a bool function, {inner.name} returns {sig.ret}")
                continue
            if inner.args:
                self.report(inner, "output calls pass no arguments; all columns are emitted")
                continue
            self.outputs.append(inner.name)
        if not self.outputs and not self.diagnostics:
            self.report(fn, "main produces no output")

    def _contains_return_expr(self, body: list[Stmt]) -> bool:
        for stmt in body:
            if isinstance(stmt, ReturnExpr):
                return True
            if isinstance(stmt, (ForStmt, IfStmt, LetStmt)):
                if self._contains_return_expr(stmt.body):
                    return True
        return False

    # -- statements

    def check_block(self, body: list[Stmt], env: dict[str, Ty], fn: FnDecl, allow_yield):
        for stmt in body:
            self.check_stmt(stmt, env, fn, allow_yield)

    def check_stmt(self, stmt: Stmt, env: dict[str, Ty], fn: FnDecl, allow_yield):
        if isinstance(stmt, ForStmt):
            inner = dict(env)
            for var, source in stmt.bindings:
                elem = self.check_set_expr(source, inner)
                if elem is None:
                    continue
                existing = inner.get(var)
                if existing is None:
                    inner[var] = elem
                elif not self._comparable(existing, elem):
                    self.report(
                        stmt, f"variable {var} has type {existing}, set element is {elem}"
                    )
            self.check_block(stmt.body, inner, fn, allow_yield)
        elif isinstance(stmt, IfStmt):
            inner = dict(env)
            for cond in stmt.conds:
                self.check_cond(cond, inner)
            self.check_block(stmt.body, inner, fn, allow_yield)
        elif isinstance(stmt, LetStmt):
            inner = dict(env)
            for var, value in stmt.bindings:
                if var in inner:
                    self.report(stmt, f"let rebinds existing variable {var}")
                ty = self.check_expr(value, inner)
                if ty is not None:
                    if ty.kind == "bool":
                        self.report(stmt, "let cannot bind a bool condition")
                    inner[var] = ty
            self.check_block(stmt.body, inner, fn, allow_yield)
        elif isinstance(stmt, YieldStmt):
            if allow_yield is None:
                self.report(stmt, "yield is only allowed inside __all__")
                return
            if stmt.schema != allow_yield:
                self.report(stmt, f"yield constructs {stmt.schema}, expected {allow_yield}")
                return
            info = self.catalog.schemas[allow_yield]
            given = {name for name, _ in stmt.fields}
            expected = {name for name, _ in info.fields}
            if given != expected:
                missing = sorted(expected - given)
                extra = sorted(given - expected)
                parts = []
                if missing:
                    parts.append(f"missing {', '.join(missing)}")
                if extra:
                    parts.append(f"unknown {', '.join(extra)}")
                self.report(stmt, f"yield fields do not cover {allow_yield}: " + "; ".join(parts))
            field_types = dict(info.fields)
            for name, value in stmt.fields:
                want = field_types.get(name)
                got = self.check_expr(value, env)
                if want is not None and got is not None and got != want:
                    self.report(stmt, f"yield field {name}: {got} vs declared {want}")
        elif isinstance(stmt, ReturnTrue):
            pass
        elif isinstance(stmt, ReturnExpr):
            pass  # checked at function level
        elif isinstance(stmt, ExprStmt):
            self.report(stmt, "bare call statements are only allowed in main")

    # -- conditions

    def check_cond(self, cond: Cond, env: dict[str, Ty]) -> None:
        if isinstance(cond, CmpCond):
            lty = self.check_expr(cond.left, env)
            rty = self.check_expr(cond.right, env)
            if lty is None or rty is None:
                return
            if cond.op in ("<", "<=", ">", ">="):
                if lty != TY_INT or rty != TY_INT:
                    self.report(cond, f"ordered comparison needs ints, got {lty} and {rty}")
            else:
                if not self._comparable(lty, rty):
                    self.report(cond, f"cannot compare {lty} with {rty}")
        elif isinstance(cond, CallCond):
            call = cond.call
            if isinstance(call, MethodCall):
                recv_ty = self.check_expr(call.recv, env)
                if recv_ty is None:
                    return
                if call.name == "key_eq":
                    if recv_ty.kind != "schema" or len(call.args) != 1:
                        self.report(cond, "key_eq compares two schema values")
                        return
                    arg_ty = self.check_expr(call.args[0], env)
                    if arg_ty is None:
                        return
                    if arg_ty.kind != "schema" or not self.catalog.compatible_schemas(
                        recv_ty.name, arg_ty.name
                    ):
                        self.report(cond, f"key_eq between {recv_ty} and {arg_ty}")
                    call.ty = TY_BOOL
                    return
                if recv_ty == TY_STR and call.name in STRING_METHODS:
                    if len(call.args) != 1 or self.check_expr(call.args[0], env) != TY_STR:
                        self.report(cond, f"string {call.name} takes one string argument")
                    call.ty = TY_BOOL
                    return
                self.report(cond, f"method {call.name!r} is not a condition")
            elif isinstance(call, FreeCall):
                sig = self.catalog.functions.get(call.name)
                if sig is None:
                    self.report(cond, f"unknown predicate {call.name!r}")
                    return
                if sig.ret != TY_BOOL:
                    self.report(cond, f"{call.name} returns {sig.ret}, not a condition")
                    return
                if len(call.args) != len(sig.params):
                    self.report(
                        cond,
                        f"{call.name} takes {len(sig.params)} arguments, got {len(call.args)}",
                    )
                    return
                for arg, (pname, pty) in zip(call.args, sig.params):
                    aty = self.check_expr(arg, env)
                    if aty is not None and not self._arg_ok(aty, pty):
                        self.report(cond, f"argument {pname}: {aty} vs declared {pty}")
                call.ty = TY_BOOL
            else:
                self.report(cond, "expected a predicate call")
        elif isinstance(cond, InCond):
            elem = self.check_set_expr(cond.source, env)
            if elem is None:
                return
            if isinstance(cond.left, Name) and cond.left.ident not in env:
                env[cond.left.ident] = elem
                cond.left.ty = elem
                return
            lty = self.check_expr(cond.left, env)
            if lty is not None and not self._comparable(lty, elem):
                self.report(cond, f"{lty} cannot range over a set of {elem}")

    def _comparable(self, a: Ty, b: Ty) -> bool:
        if a == b and a.kind in ("int", "string", "schema"):
            return True
        if a.kind == "schema" and b.kind == "schema":
            return self.catalog.compatible_schemas(a.name, b.name)
        return False

    def _arg_ok(self, actual: Ty, declared: Ty) -> bool:
        if actual == declared:
            return True
        if actual.kind == "schema" and declared.kind == "schema":
            return self.catalog.compatible_schemas(actual.name, declared.name)
        return False

    # -- expressions

    def check_set_expr(self, expr: Expr, env: dict[str, Ty]) -> Ty | None:
        """Type a for/in source; returns the element type."""
        if isinstance(expr, FreeCall) and expr.name in self.catalog.schemas:
            if len(expr.args) != 1:
                self.report(expr, f"{expr.name}(db) takes exactly the database")
                return None
            arg_ty = self.check_expr(expr.args[0], env)
            if arg_ty is None or arg_ty.kind != "db":
                self.report(expr, f"{expr.name}(...) expects a database handle")
                return None
            expr.ty = Ty("set", expr.name)
            return Ty("schema", expr.name)
        ty = self.check_expr(expr, env)
        if ty is None:
            return None
        if ty.kind in ("schema", "int", "string"):
            return ty
        self.report(expr, f"cannot iterate over {ty}")
        return None

    def check_expr(self, expr: Expr, env: dict[str, Ty]) -> Ty | None:
        ty = self._expr_type(expr, env)
        expr.ty = ty
        return ty

    def _expr_type(self, expr: Expr, env: dict[str, Ty]) -> Ty | None:
        if isinstance(expr, IntLit):
            return TY_INT
        if isinstance(expr, StrLit):
            return TY_STR
        if isinstance(expr, Name):
            ty = env.get(expr.ident)
            if ty is None:
                self.report(expr, f"unknown variable {expr.ident!r}")
            return ty
        if isinstance(expr, BinOp):
            lty = self.check_expr(expr.left, env)
            rty = self.check_expr(expr.right, env)
            if lty is None or rty is None:
                return None
            if lty != TY_INT or rty != TY_INT:
                self.report(expr, f"arithmetic needs ints, got {lty} and {rty}")
                return None
            return TY_INT
        if isinstance(expr, FieldAccess):
            recv_ty = self.check_expr(expr.recv, env)
            if recv_ty is None:
                return None
            if recv_ty.kind != "schema":
                self.report(expr, f"{recv_ty} has no fields")
                return None
            info = self.catalog.schemas[recv_ty.name]
            for fname, fty in info.fields:
                if fname == expr.name:
                    return fty
            self.report(expr, f"schema {recv_ty.name} has no field {expr.name!r}")
            return None
        if isinstance(expr, MethodCall):
            recv_ty = self.check_expr(expr.recv, env)
            if recv_ty is None:
                return None
            if recv_ty.kind != "schema":
                self.report(expr, f"{recv_ty} has no method {expr.name!r}")
                return None
            sig = self.catalog.resolve_method(recv_ty.name, expr.name)
            if sig is None:
                self.report(
                    expr, f"unknown method {expr.name!r} on schema {recv_ty.name}"
                )
                return None
            if expr.args:
                self.report(expr, f"method {expr.name} takes no arguments")
            return sig.ret
        if isinstance(expr, StaticCall):
            if expr.type_name != self.catalog.db_type or expr.name != "load":
                self.report(
                    expr, f"unknown static call {expr.type_name}::{expr.name}"
                )
                return None
            if len(expr.args) != 1 or not isinstance(expr.args[0], StrLit):
                self.report(expr, "load takes a single literal path")
            return Ty("db", self.catalog.db_type)
        if isinstance(expr, FreeCall):
            if expr.name in AGGREGATE_FNS:
                if len(expr.args) != 1:
                    self.report(expr, f"{expr.name} takes one expression")
                    return None
                inner = self.check_expr(expr.args[0], env)
                if inner is None:
                    return None
                if expr.name != "count" and inner != TY_INT:
                    self.report(expr, f"{expr.name} aggregates ints, got {inner}")
                return TY_INT
            if expr.name in self.catalog.schemas:
                self.report(expr, f"{expr.name}(db) is a set; use it in 'for' or 'in'")
                return None
            sig = self.catalog.functions.get(expr.name)
            if sig is None:
                self.report(expr, f"unknown function {expr.name!r}")
                return None
            if sig.ret.kind == "db":
                if expr.args:
                    self.report(expr, f"{expr.name} takes no arguments")
                return sig.ret
            if sig.ret == TY_BOOL:
                self.report(expr, f"predicate {expr.name} can only be used as a condition")
                return None
            if expr.args:
                self.report(expr, f"{expr.name} takes no arguments")
            return sig.ret
        self.report(expr, "unsupported expression")
        return None


def typecheck(module: Module, catalog: TypeCatalog, is_library: bool = False) -> TypedModule:
    """Check a module; raises TypeError_ carrying every diagnostic."""
    working = catalog if is_library else catalog.clone()
    checker = _Checker(working, is_library)
    checker.run(module)
    if checker.diagnostics:
        raise TypeError_(checker.diagnostics)
    if not is_library:
        working.library_modules = list(catalog.library_modules)
    return TypedModule(module=module, catalog=working, outputs=checker.outputs, is_library=is_library)
