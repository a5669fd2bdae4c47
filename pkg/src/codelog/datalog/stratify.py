"""Stratification over negation and aggregation.

Strata are minimized: condensation layers are merged unless a negative or
aggregate edge forces a strictly higher stratum, so a purely positive
program (even a recursive one) lands in a single stratum.
"""

from __future__ import annotations

from dataclasses import dataclass

from .ir import (
    Agg,
    Arith,
    Bind,
    Concat,
    DatalogProgram,
    Pos,
    Rule,
    StratifyError,
    expr_vars,
    literal_atoms,
)


@dataclass
class Stratification:
    strata: list[list[str]]  # each stratum: sorted IDB predicate names
    stratum_of: dict[str, int]
    sccs: list[list[str]]  # condensation components in topological order
    scc_of: dict[str, int]


def _dependency_edges(program: DatalogProgram) -> dict[str, set[tuple[str, str]]]:
    """IDB-to-IDB edges: head <- {(body predicate, polarity)}."""
    idb = set(program.idb_names())
    edges: dict[str, set[tuple[str, str]]] = {name: set() for name in idb}
    for rule in program.rules:
        for a, polarity in (pair for lit in rule.body for pair in literal_atoms(lit)):
            if a.pred in idb:
                edges[rule.head.pred].add((a.pred, polarity))
    return edges


def _tarjan_sccs(nodes: list[str], succ: dict[str, set[str]]) -> list[list[str]]:
    """Iterative Tarjan; components are returned in reverse topological order."""
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    on_stack: set[str] = set()
    stack: list[str] = []
    sccs: list[list[str]] = []
    counter = 0

    for root in nodes:
        if root in index:
            continue
        work = [(root, iter(sorted(succ.get(root, ()))))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            node, it = work[-1]
            advanced = False
            for nxt in it:
                if nxt not in index:
                    index[nxt] = low[nxt] = counter
                    counter += 1
                    stack.append(nxt)
                    on_stack.add(nxt)
                    work.append((nxt, iter(sorted(succ.get(nxt, ())))))
                    advanced = True
                    break
                if nxt in on_stack:
                    low[node] = min(low[node], index[nxt])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
            if low[node] == index[node]:
                comp = []
                while True:
                    member = stack.pop()
                    on_stack.discard(member)
                    comp.append(member)
                    if member == node:
                        break
                sccs.append(sorted(comp))
    return sccs


def stratify(program: DatalogProgram) -> Stratification:
    """Compute a minimal stratification or fail on a negative cycle."""
    idb = sorted(program.idb_names())
    edges = _dependency_edges(program)
    # successor map: dependency -> dependents (edges point body -> head)
    succ: dict[str, set[str]] = {name: set() for name in idb}
    for head, deps in edges.items():
        for dep, _ in deps:
            succ[dep].add(head)

    # Tarjan emits dependents first; reverse to get dependencies first.
    sccs = list(reversed(_tarjan_sccs(idb, succ)))
    scc_of = {name: i for i, comp in enumerate(sccs) for name in comp}

    # A negative or aggregate edge inside one component is non-stratifiable.
    for head, deps in edges.items():
        for dep, polarity in deps:
            if polarity != "positive" and scc_of[dep] == scc_of[head]:
                cycle = sccs[scc_of[head]]
                raise StratifyError(
                    "program is not stratifiable: cycle through "
                    f"{polarity} dependency involving {{{', '.join(cycle)}}}",
                    cycle=cycle,
                )

    _check_recursive_binds(program, scc_of)

    # Minimal stratum numbers over the condensation.
    stratum_of_scc = [0] * len(sccs)
    for i, comp in enumerate(sccs):
        best = 0
        for head in comp:
            for dep, polarity in edges[head]:
                j = scc_of[dep]
                if j == i:
                    continue
                bump = 1 if polarity != "positive" else 0
                best = max(best, stratum_of_scc[j] + bump)
        stratum_of_scc[i] = best

    stratum_of = {name: stratum_of_scc[scc_of[name]] for name in idb}
    count = max(stratum_of_scc, default=-1) + 1
    strata = [sorted(n for n in idb if stratum_of[n] == k) for k in range(count)]
    return Stratification(strata=strata, stratum_of=stratum_of, sccs=sccs, scc_of=scc_of)


def rule_is_recursive(rule: Rule, scc_of: dict[str, int]) -> bool:
    head_scc = scc_of.get(rule.head.pred)
    if head_scc is None:
        return False
    for a, _ in (pair for lit in rule.body for pair in literal_atoms(lit)):
        if scc_of.get(a.pred) == head_scc:
            return True
    return False


def _check_recursive_binds(program: DatalogProgram, scc_of: dict[str, int]) -> None:
    """Reject value-inventing binds fed from a rule's own recursive cycle.

    Arithmetic or concatenation whose inputs flow from same-SCC atoms could
    grow the value domain without bound; rejecting it keeps fixpoints finite
    without a general termination analysis.
    """
    for index, rule in enumerate(program.rules):
        head_scc = scc_of.get(rule.head.pred)
        if head_scc is None:
            continue
        recursive_vars: set[str] = set()
        for lit in rule.body:
            if isinstance(lit, Pos) and scc_of.get(lit.atom.pred) == head_scc:
                recursive_vars |= lit.atom.vars()
        if not recursive_vars:
            continue
        tainted = set(recursive_vars)
        changed = True
        while changed:
            changed = False
            for lit in rule.body:
                if isinstance(lit, Bind) and lit.var.name not in tainted:
                    if expr_vars(lit.expr) & tainted:
                        tainted.add(lit.var.name)
                        changed = True
        for lit in rule.body:
            if isinstance(lit, Bind) and isinstance(lit.expr, (Arith, Concat)):
                if expr_vars(lit.expr) & tainted:
                    raise StratifyError(
                        f"{rule.label(index)}: arithmetic bind over recursive "
                        f"values of {rule.head.pred}'s cycle may not terminate"
                    )
            if isinstance(lit, Agg):
                for sub in lit.body:
                    if isinstance(sub, Bind) and isinstance(sub.expr, (Arith, Concat)):
                        if expr_vars(sub.expr) & tainted:
                            raise StratifyError(
                                f"{rule.label(index)}: arithmetic bind over recursive "
                                "values inside aggregate body"
                            )
