"""Brute-force interpreter for typed query modules.

Evaluates scripts by direct nested-loop interpretation over the stored
relations, independently of the Datalog engine: its own method semantics,
its own recursion fixpoint, no rules, no strata, no deltas. Slow and
simple on purpose; it is the reference semantics the compiled path is
checked against.
"""

from __future__ import annotations

from .syntax import (
    BinOp,
    CallCond,
    CmpCond,
    ExprStmt,
    FieldAccess,
    ForStmt,
    FreeCall,
    IfStmt,
    InCond,
    IntLit,
    LetStmt,
    MethodCall,
    Name,
    ReturnTrue,
    StaticCall,
    StrLit,
    YieldStmt,
)
from .types import AGGREGATE_FNS, TypedModule

_DB = object()

_BRANCH_KINDS = {"if", "for", "while", "match_case", "bool_op_branch", "except_handler"}


class OracleError(Exception):
    pass


def _rows(relations, name) -> list[tuple]:
    rel = relations.get(name)
    if rel is None:
        return []
    return list(getattr(rel, "tuples", rel))


class _Facts:
    """Indexed view of the stored relations with direct method semantics."""

    def __init__(self, language: str, relations: dict):
        self.language = language
        self.rel = {
            name: _rows(relations, name)
            for name in list(relations)
        }
        self.by_id = {
            name: {row[0]: row for row in rows} for name, rows in self.rel.items()
        }

    def rows(self, name: str) -> list[tuple]:
        return self.rel.get(name, [])

    def row(self, name: str, node_id: int):
        return self.by_id.get(name, {}).get(node_id)

    # -- python methods

    def _function_signature(self, fid: int) -> list[str]:
        row = self.row("function", fid)
        if row is None:
            return []
        _, name, _, parent, _, _ = row
        count = sum(1 for p in self.rows("parameter") if p[1] == fid)
        cls = self.row("class", parent)
        if cls is not None:
            return [f"{cls[1]}.{name}/{count}"]
        return [f"{name}/{count}"]

    def _statements_in(self, fid: int) -> list[tuple]:
        children: dict[int, list[tuple]] = {}
        for row in self.rows("statement"):
            children.setdefault(row[2], []).append(row)
        out: list[tuple] = []
        frontier = [fid]
        while frontier:
            parent = frontier.pop()
            for row in children.get(parent, []):
                out.append(row)
                frontier.append(row[0])
        return out

    def _cyclomatic(self, fid: int) -> list[int]:
        if self.row("function", fid) is None:
            return []
        branches = sum(1 for row in self._statements_in(fid) if row[1] in _BRANCH_KINDS)
        return [1 + branches]

    def _resolve_call(self, call_row: tuple) -> list[int]:
        """Name-based call resolution with same-class/same-file preference."""
        _, enclosing, text, loc = call_row

        def name_matches(fname: str) -> bool:
            return text == fname or text.endswith("." + fname)

        candidates = [f for f in self.rows("function") if name_matches(f[1])]
        if not candidates:
            return []
        encl_row = self.row("function", enclosing)
        if encl_row is not None:
            encl_class = encl_row[3]
            if self.row("class", encl_class) is not None:
                same_class = [f[0] for f in candidates if f[3] == encl_class]
                if same_class:
                    return same_class
        loc_row = self.row("location", loc)
        if loc_row is not None:
            file_id = loc_row[1]
            same_file = [f[0] for f in candidates if f[4] == file_id]
            if same_file:
                return same_file
        return [f[0] for f in candidates]

    def _callers(self, fid: int) -> list[int]:
        out = []
        for call_row in self.rows("call"):
            if fid in self._resolve_call(call_row):
                caller = call_row[1]
                if self.row("function", caller) is not None:
                    out.append(caller)
        return out

    def _call_sites(self, fid: int) -> list[int]:
        return [c[0] for c in self.rows("call") if fid in self._resolve_call(c)]

    def method(self, root: str, name: str, self_id: int) -> list:
        key = (self.language, root, name)
        handler = _METHODS.get(key)
        if handler is None:
            raise OracleError(f"no oracle semantics for {root}.{name}")
        return handler(self, self_id)


def _col(relation: str, column: int):
    def get(facts: _Facts, self_id: int) -> list:
        row = facts.row(relation, self_id)
        return [row[column]] if row is not None else []

    return get


def _existing(relation: str, column: int, target: str):
    def get(facts: _Facts, self_id: int) -> list:
        row = facts.row(relation, self_id)
        if row is None:
            return []
        ref = row[column]
        return [ref] if facts.row(target, ref) is not None else []

    return get


_METHODS = {
    ("python", "File", "getRelativePath"): _col("file", 1),
    ("python", "File", "getLineCount"): _col("file", 3),
    ("python", "File", "getCodeLineCount"): _col("file", 4),
    ("python", "File", "getCommentLineCount"): _col("file", 5),
    ("python", "Location", "getFile"): _col("location", 1),
    ("python", "Location", "getRelativePath"): lambda f, i: (
        [f.row("file", f.row("location", i)[1])[1]] if f.row("location", i) else []
    ),
    ("python", "Location", "getStartLineNumber"): _col("location", 2),
    ("python", "Location", "getEndLineNumber"): _col("location", 4),
    ("python", "Class", "getName"): _col("class", 1),
    ("python", "Class", "getFile"): _col("class", 2),
    ("python", "Class", "getLocation"): _col("class", 3),
    ("python", "Class", "getBase"): lambda f, i: [
        row[2] for row in f.rows("class_base") if row[0] == i
    ],
    ("python", "Class", "getQualifiedName"): lambda f, i: (
        [f.row("file", f.row("class", i)[2])[1] + ":" + f.row("class", i)[1]]
        if f.row("class", i)
        else []
    ),
    ("python", "Callable", "getName"): _col("function", 1),
    ("python", "Callable", "getKind"): _col("function", 2),
    ("python", "Callable", "getFile"): _col("function", 4),
    ("python", "Callable", "getLocation"): _col("function", 5),
    ("python", "Callable", "getEnclosingClass"): _existing("function", 3, "class"),
    ("python", "Callable", "getParameterCount"): lambda f, i: (
        [sum(1 for p in f.rows("parameter") if p[1] == i)]
        if f.row("function", i)
        else []
    ),
    ("python", "Callable", "getSignature"): _Facts._function_signature,
    ("python", "Callable", "getQualifiedName"): lambda f, i: (
        [
            f.row("file", f.row("function", i)[4])[1]
            + ":"
            + (
                f.row("class", f.row("function", i)[3])[1] + "."
                if f.row("class", f.row("function", i)[3])
                else ""
            )
            + f.row("function", i)[1]
        ]
        if f.row("function", i)
        else []
    ),
    ("python", "Callable", "getCyclomaticComplexity"): _Facts._cyclomatic,
    ("python", "Callable", "getCaller"): _Facts._callers,
    ("python", "Callable", "getACallSite"): _Facts._call_sites,
    ("python", "Call", "getCalleeText"): _col("call", 2),
    ("python", "Call", "getEnclosingFunction"): _existing("call", 1, "function"),
    ("python", "Call", "getLocation"): _col("call", 3),
    ("xml", "XmlFile", "getFileName"): _col("xml_file", 1),
    ("xml", "XmlFile", "getRelativePath"): _col("xml_file", 2),
    ("xml", "XmlLocation", "getFile"): _col("xml_location", 1),
    ("xml", "XmlLocation", "getStartLineNumber"): _col("xml_location", 2),
    ("xml", "XmlLocation", "getEndLineNumber"): _col("xml_location", 4),
    ("xml", "XmlElement", "getElementName"): _col("xml_element", 1),
    ("xml", "XmlElement", "getLocation"): _col("xml_element", 2),
    ("xml", "XmlElement", "getParent"): _existing("xml_element", 3, "xml_element"),
    ("xml", "XmlCharacter", "getText"): _col("xml_character", 1),
    ("xml", "XmlCharacter", "getBelongedElement"): _existing(
        "xml_character", 2, "xml_element"
    ),
}

_BACKING = {
    "python": {"File": "file", "Location": "location", "Class": "class",
               "Callable": "function", "Call": "call"},
    "xml": {"XmlFile": "xml_file", "XmlLocation": "xml_location",
            "XmlElement": "xml_element", "XmlCharacter": "xml_character"},
}


class _Interp:
    def __init__(self, typed: TypedModule, facts: _Facts):
        self.typed = typed
        self.catalog = typed.catalog
        self.facts = facts
        self.fn_sets: dict[str, set[tuple]] = {}
        self.schema_members: dict[str, set[int]] = {}
        self._computing: set[str] = set()
        self._fns: dict[str, object] = {}
        self._alls: dict[str, object] = {}
        for module in self.catalog.library_modules + [typed.module]:
            for fn in module.functions:
                if fn.name != "main":
                    self._fns[fn.name] = fn
            for impl in module.impls:
                for method in impl.methods:
                    if method.data_constraint and method.name == "__all__":
                        self._alls[impl.target] = method

    # -- membership

    def members(self, schema: str) -> set[int]:
        cached = self.schema_members.get(schema)
        if cached is not None:
            return cached
        info = self.catalog.schemas[schema]
        if info.backing is not None:
            members = {row[0] for row in self.facts.rows(info.backing)}
        else:
            method = self._alls.get(schema)
            if method is None:
                members = set()
            else:
                if schema in self._computing:
                    raise OracleError(f"cyclic schema membership for {schema}")
                self._computing.add(schema)
                try:
                    members = set()
                    env = {method.params[0].name: _DB}
                    for got in self._run_yield(method.body, env, schema):
                        members.add(got)
                finally:
                    self._computing.discard(schema)
        self.schema_members[schema] = members
        return members

    def _run_yield(self, stmts, env, schema):
        for env2, stmt in self._paths(stmts, env):
            if isinstance(stmt, YieldStmt):
                for fname, value in stmt.fields:
                    if fname == "id":
                        for v in self.eval_expr(value, env2):
                            yield v

    # -- path enumeration: yields (env, leaf stmt) for returns and yields

    def _paths(self, stmts, env):
        for stmt in stmts:
            if isinstance(stmt, ForStmt):
                for env2 in self._bind_all(stmt.bindings, env):
                    yield from self._paths(stmt.body, env2)
            elif isinstance(stmt, IfStmt):
                envs = [env]
                for cond in stmt.conds:
                    envs = [e2 for e in envs for e2 in self.eval_cond(cond, e)]
                for e in envs:
                    yield from self._paths(stmt.body, e)
            elif isinstance(stmt, LetStmt):
                envs = [env]
                for var, value in stmt.bindings:
                    envs = [
                        {**e, var: v}
                        for e in envs
                        for v in self.eval_expr(value, e)
                    ]
                for e in envs:
                    yield from self._paths(stmt.body, e)
            elif isinstance(stmt, (ReturnTrue, YieldStmt)):
                yield env, stmt
            elif isinstance(stmt, ExprStmt):
                continue
            else:
                raise OracleError(f"unsupported statement {stmt!r}")

    def _bind_all(self, bindings, env):
        envs = [env]
        for var, source in bindings:
            next_envs = []
            for e in envs:
                if var in e:
                    values = set(self.eval_set(source, e))
                    if e[var] in values:
                        next_envs.append(e)
                else:
                    for v in self.eval_set(source, e):
                        next_envs.append({**e, var: v})
            envs = next_envs
        return envs

    # -- function result sets, computed group by group so negation only
    #    ever consults finished functions

    def compute_all(self) -> dict[str, set[tuple]]:
        bool_fns = [
            n
            for n in self._fns
            if (sig := self.catalog.functions.get(n)) and sig.ret.kind == "bool"
        ]
        calls: dict[str, set[str]] = {n: set() for n in bool_fns}
        negated: dict[str, set[str]] = {n: set() for n in bool_fns}
        for n in bool_fns:
            self._scan_calls(self._fns[n].body, calls[n], negated[n])
            calls[n] &= set(bool_fns)
            negated[n] &= set(bool_fns)
        groups = _scc_groups(bool_fns, calls)
        done: set[str] = set()
        for group in groups:
            for n in group:
                for target in negated[n]:
                    if target in group:
                        raise OracleError(
                            f"{n}: negation over mutually recursive {target}"
                        )
                self.fn_sets.setdefault(n, set())
            changed = True
            while changed:
                changed = False
                for n in group:
                    new = self._fn_tuples(n)
                    if not new <= self.fn_sets[n]:
                        self.fn_sets[n] |= new
                        changed = True
            done |= set(group)
        return self.fn_sets

    def _scan_calls(self, node, out: set[str], negated: set[str]) -> None:
        if isinstance(node, list):
            for item in node:
                self._scan_calls(item, out, negated)
            return
        if isinstance(node, FreeCall):
            out.add(node.name)
            for arg in node.args:
                self._scan_calls(arg, out, negated)
            return
        if isinstance(node, CallCond):
            if node.negated and isinstance(node.call, FreeCall):
                negated.add(node.call.name)
            self._scan_calls(node.call, out, negated)
            return
        for attr in ("body", "bindings", "conds", "fields", "args", "recv",
                     "left", "right", "source", "call", "value"):
            child = getattr(node, attr, None)
            if isinstance(child, list):
                for item in child:
                    if isinstance(item, tuple):
                        self._scan_calls(item[1], out, negated)
                    else:
                        self._scan_calls(item, out, negated)
            elif child is not None and not isinstance(child, (str, int)):
                self._scan_calls(child, out, negated)

    def _fn_tuples(self, name: str) -> set[tuple]:
        fn = self._fns[name]
        sig = self.catalog.functions[name]
        params = [p.name for p in fn.params]
        # Schema-typed parameters range over their type's membership; the
        # primitive ones must be pinned down by the body.
        seeds: list[dict] = [{}]
        for pname, pty in sig.params:
            if pty.kind == "schema":
                domain = sorted(self.members(pty.name))
                seeds = [{**e, pname: v} for e in seeds for v in domain]
        out: set[tuple] = set()
        for seed in seeds:
            for env, stmt in self._paths(fn.body, seed):
                if isinstance(stmt, ReturnTrue):
                    missing = [p for p in params if p not in env]
                    if missing:
                        raise OracleError(
                            f"{name}: parameters {missing} unbound at return"
                        )
                    out.add(tuple(env[p] for p in params))
        return out

    # -- conditions

    def eval_cond(self, cond, env):
        if isinstance(cond, CmpCond):
            yield from self._eval_cmp(cond, env)
        elif isinstance(cond, CallCond):
            yield from self._eval_call_cond(cond, env)
        elif isinstance(cond, InCond):
            if isinstance(cond.left, Name) and cond.left.ident not in env:
                for v in self.eval_set(cond.source, env):
                    yield {**env, cond.left.ident: v}
            else:
                values = set(self.eval_set(cond.source, env))
                for lv in self.eval_expr(cond.left, env):
                    if lv in values:
                        yield env
                        break
        else:
            raise OracleError("unsupported condition")

    def _eval_cmp(self, cond, env):
        if cond.op == "=":
            if isinstance(cond.left, Name) and cond.left.ident not in env:
                for v in self.eval_expr(cond.right, env):
                    yield {**env, cond.left.ident: v}
                return
            if isinstance(cond.right, Name) and cond.right.ident not in env:
                for v in self.eval_expr(cond.left, env):
                    yield {**env, cond.right.ident: v}
                return
        left = list(self.eval_expr(cond.left, env))
        right = list(self.eval_expr(cond.right, env))
        ops = {
            "=": lambda a, b: a == b,
            "!=": lambda a, b: a != b,
            "<": lambda a, b: a < b,
            "<=": lambda a, b: a <= b,
            ">": lambda a, b: a > b,
            ">=": lambda a, b: a >= b,
        }
        op = ops[cond.op]
        for lv in left:
            for rv in right:
                if op(lv, rv):
                    yield env
                    return

    def _eval_call_cond(self, cond, env):
        call = cond.call
        if isinstance(call, MethodCall):
            if call.name == "key_eq":
                recv = list(self.eval_expr(call.recv, env))
                arg = list(self.eval_expr(call.args[0], env))
                hit = any(a == b for a in recv for b in arg)
                if hit != cond.negated:
                    yield env
                return
            if call.recv.ty is not None and call.recv.ty.kind == "string":
                recv = list(self.eval_expr(call.recv, env))
                arg = list(self.eval_expr(call.args[0], env))
                checks = {
                    "startsWith": str.startswith,
                    "endsWith": str.endswith,
                    "contains": lambda a, b: b in a,
                }
                hit = any(checks[call.name](a, b) for a in recv for b in arg)
                if hit != cond.negated:
                    yield env
                return
            raise OracleError(f"method {call.name} is not a condition")
        if isinstance(call, FreeCall):
            sig = self.catalog.functions.get(call.name)
            if sig is not None and sig.builtin_pred:
                rows = {r[0] for r in self.facts.rows(sig.builtin_pred)}
                arg = call.args[0]
                if isinstance(arg, Name) and arg.ident not in env:
                    if cond.negated:
                        raise OracleError("negated call with unbound argument")
                    for v in sorted(rows):
                        yield {**env, arg.ident: v}
                    return
                hit = any(v in rows for v in self.eval_expr(arg, env))
                if hit != cond.negated:
                    yield env
                return
            rows = self.fn_sets.get(call.name, set())
            patterns = call.args
            if cond.negated:
                bound = []
                for arg in patterns:
                    values = list(self.eval_expr(arg, env))
                    if len(values) != 1:
                        raise OracleError("negated call with unbound argument")
                    bound.append(values[0])
                if tuple(bound) not in rows:
                    yield env
                return
            for row in rows:
                env2 = env
                ok = True
                for arg, value in zip(patterns, row):
                    if isinstance(arg, Name) and arg.ident not in env2:
                        env2 = {**env2, arg.ident: value}
                    else:
                        avals = list(self.eval_expr(arg, env2))
                        if value not in avals:
                            ok = False
                            break
                if ok:
                    yield env2
            return
        raise OracleError("unsupported call condition")

    # -- expressions

    def eval_set(self, expr, env):
        if isinstance(expr, FreeCall) and expr.name in self.catalog.schemas:
            yield from sorted(self.members(expr.name))
            return
        yield from self.eval_expr(expr, env)

    def eval_expr(self, expr, env):
        if isinstance(expr, IntLit):
            yield expr.value
        elif isinstance(expr, StrLit):
            yield expr.value
        elif isinstance(expr, Name):
            if expr.ident not in env:
                raise OracleError(f"unbound variable {expr.ident}")
            yield env[expr.ident]
        elif isinstance(expr, BinOp):
            for lv in self.eval_expr(expr.left, env):
                for rv in self.eval_expr(expr.right, env):
                    yield self._arith(expr.op, lv, rv)
        elif isinstance(expr, FieldAccess):
            root = self.catalog.schemas[expr.recv.ty.name].root
            info = self.catalog.schemas[root]
            col = info.field_cols[expr.name]
            for rid in self.eval_expr(expr.recv, env):
                row = self.facts.row(info.backing, rid)
                if row is not None:
                    yield row[col]
        elif isinstance(expr, MethodCall):
            schema = expr.recv.ty.name
            sig = self.catalog.resolve_method(schema, expr.name)
            for rid in self.eval_expr(expr.recv, env):
                yield from self.facts.method(sig.schema, expr.name, rid)
        elif isinstance(expr, StaticCall):
            yield _DB
        elif isinstance(expr, FreeCall):
            if expr.name in AGGREGATE_FNS:
                values = set()
                for v in self.eval_expr(expr.args[0], env):
                    values.add(v)
                if expr.name == "count":
                    yield len(values)
                elif values:
                    fn = {"sum": sum, "min": min, "max": max}[expr.name]
                    yield fn(values)
            else:
                sig = self.catalog.functions.get(expr.name)
                if sig is not None and sig.ret.kind == "db":
                    yield _DB
                else:
                    raise OracleError(f"call {expr.name} is not a value expression")
        else:
            raise OracleError("unsupported expression")

    @staticmethod
    def _arith(op, a, b):
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if b == 0:
            raise OracleError("division by zero")
        q = abs(a) // abs(b)
        return q if (a >= 0) == (b >= 0) else -q


def _scc_groups(nodes: list[str], succ: dict[str, set[str]]) -> list[list[str]]:
    """Kosaraju-style SCC grouping, dependencies first."""
    order: list[str] = []
    seen: set[str] = set()

    def dfs(start, graph):
        stack = [(start, iter(sorted(graph.get(start, ()))))]
        seen.add(start)
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if nxt in seen or nxt not in graph:
                    continue
                seen.add(nxt)
                stack.append((nxt, iter(sorted(graph.get(nxt, ())))))
                advanced = True
                break
            if not advanced:
                stack.pop()
                order.append(node)

    for n in sorted(nodes):
        if n not in seen:
            dfs(n, succ)
    pred: dict[str, set[str]] = {n: set() for n in nodes}
    for src, dsts in succ.items():
        for dst in dsts:
            if dst in pred:
                pred[dst].add(src)
    seen.clear()
    groups: list[list[str]] = []
    for n in reversed(order):
        if n in seen:
            continue
        comp: list[str] = []
        stack = [n]
        seen.add(n)
        while stack:
            node = stack.pop()
            comp.append(node)
            for nxt in pred.get(node, ()):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        groups.append(sorted(comp))
    # The second pass finds components callers-first; callees (the
    # dependencies) must be evaluated first, so reverse.
    return list(reversed(groups))


def interpret_module(typed: TypedModule, relations: dict) -> dict[str, set[tuple]]:
    """Evaluate a script's output functions by direct interpretation."""
    facts = _Facts(typed.catalog.language, relations)
    interp = _Interp(typed, facts)
    sets = interp.compute_all()
    return {name: sets.get(name, set()) for name in typed.outputs}
