"""Query planning: rule pruning, join ordering, and staged execution plans.

A plan is a block-oriented sequence of stages, one per stratum; a stage
only reads EDB relations and outputs of earlier stages. Recursive rule
groups are wrapped in fixpoint-loop nodes. The planner also reports
operator counts before and after pruning.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .datalog.ir import (
    Agg,
    Bind,
    Cmp,
    DatalogError,
    DatalogProgram,
    Literal,
    Neg,
    Pos,
    Rule,
    check_safety,
    expr_vars,
    literal_atoms,
)
from .datalog.stratify import Stratification, stratify
from .facts import Manifest


@dataclass(frozen=True)
class DepEdge:
    src: str
    dst: str
    polarity: str  # positive | negative | aggregate


@dataclass
class DependencyGraph:
    nodes: set[str]
    edges: set[DepEdge]

    def predecessors(self, name: str) -> set[str]:
        return {e.src for e in self.edges if e.dst == name}


def build_dependency_graph(program: DatalogProgram) -> DependencyGraph:
    nodes = set(program.predicates)
    edges: set[DepEdge] = set()
    for rule in program.rules:
        for a, polarity in (pair for lit in rule.body for pair in literal_atoms(lit)):
            edges.add(DepEdge(a.pred, rule.head.pred, polarity))
    return DependencyGraph(nodes=nodes, edges=edges)


def prune_unreachable(program: DatalogProgram) -> DatalogProgram:
    """Keep exactly the rules backward-reachable from the outputs."""
    graph = build_dependency_graph(program)
    reachable: set[str] = set()
    frontier = list(program.outputs)
    while frontier:
        name = frontier.pop()
        if name in reachable:
            continue
        reachable.add(name)
        frontier.extend(graph.predecessors(name))

    rules = [r for r in program.rules if r.head.pred in reachable]
    keep = set(program.outputs) | {r.head.pred for r in rules}
    for rule in rules:
        for a in (atom for lit in rule.body for atom, _ in literal_atoms(lit)):
            keep.add(a.pred)
    predicates = {n: p for n, p in program.predicates.items() if n in keep}
    return DatalogProgram(
        predicates=predicates,
        rules=rules,
        outputs=list(program.outputs),
        output_columns={
            k: v for k, v in program.output_columns.items() if k in keep
        },
    )


def _literal_requirements(lit: Literal) -> set[str]:
    if isinstance(lit, Neg):
        return lit.atom.vars()
    if isinstance(lit, Cmp):
        return expr_vars(lit.left) | expr_vars(lit.right)
    if isinstance(lit, Bind):
        return expr_vars(lit.expr)
    if isinstance(lit, Agg):
        return {v.name for v in lit.group_vars}
    return set()


def order_joins(rule: Rule, cardinality: dict[str, int] | None = None) -> Rule:
    """Greedy join order: most bound variables first, then smaller relations.

    Non-atom literals are emitted at the earliest point where all their
    variables are bound, preserving their relative order.
    """
    cardinality = cardinality or {}
    atoms = [(i, lit) for i, lit in enumerate(rule.body) if isinstance(lit, Pos)]
    others = [(i, lit) for i, lit in enumerate(rule.body) if not isinstance(lit, Pos)]
    ordered: list[Literal] = []
    bound: set[str] = set()

    def flush_ready():
        nonlocal others
        progress = True
        while progress:
            progress = False
            for i, lit in list(others):
                if _literal_requirements(lit) <= bound:
                    ordered.append(lit)
                    others.remove((i, lit))
                    if isinstance(lit, (Bind, Agg)):
                        bound.add(lit.var.name)
                    progress = True

    flush_ready()
    remaining = list(atoms)
    while remaining:
        best = None
        best_key = None
        for i, lit in remaining:
            vars_bound = len(lit.atom.vars() & bound)
            size = cardinality.get(lit.atom.pred)
            key = (-vars_bound, size if size is not None else float("inf"), i)
            if best_key is None or key < best_key:
                best, best_key = (i, lit), key
        remaining.remove(best)
        ordered.append(best[1])
        bound |= best[1].atom.vars()
        flush_ready()

    # Anything still pending is unsafe; keep original order so the safety
    # checker reports it rather than dropping literals silently.
    ordered.extend(lit for _, lit in others)
    return Rule(rule.head, tuple(ordered), rule.provenance)


@dataclass
class PlanNode:
    kind: str  # Scan | Join | Filter | Project | Union | Difference | Aggregate | FixpointLoop
    detail: str = ""
    children: list["PlanNode"] = field(default_factory=list)

    def count(self) -> int:
        return 1 + sum(c.count() for c in self.children)

    def render(self, indent: int = 0, out: list[str] | None = None) -> list[str]:
        out = out if out is not None else []
        label = self.kind if not self.detail else f"{self.kind} {self.detail}"
        out.append("  " * indent + label)
        for child in self.children:
            child.render(indent + 1, out)
        return out


@dataclass
class Stage:
    id: int
    targets: list[str]
    operators: list[PlanNode]
    recursive: bool

    def node_count(self) -> int:
        return sum(op.count() for op in self.operators)


@dataclass
class ExecutionPlan:
    stages: list[Stage]
    node_count_before: int
    node_count_after: int
    program: DatalogProgram  # pruned, join-ordered
    stratification: Stratification

    def render(self, show_rules: bool = False) -> str:
        from .datalog.textfmt import format_rule

        lines = []
        for stage in self.stages:
            kind = "recursive" if stage.recursive else "straight"
            lines.append(f"stage {stage.id} ({kind}): {', '.join(stage.targets)}")
            for op in stage.operators:
                lines.extend("  " + l for l in op.render())
            if show_rules:
                targets = set(stage.targets)
                for rule in self.program.rules:
                    if rule.head.pred in targets:
                        lines.append("  | " + format_rule(rule))
        lines.append(f"nodes: {self.node_count_before} -> {self.node_count_after}")
        return "\n".join(lines) + "\n"


def _rule_operators(rule: Rule) -> PlanNode:
    node: PlanNode | None = None
    for lit in rule.body:
        if isinstance(lit, Pos):
            scan = PlanNode("Scan", lit.atom.pred)
            node = scan if node is None else PlanNode("Join", lit.atom.pred, [node, scan])
        elif isinstance(lit, Neg):
            scan = PlanNode("Scan", lit.atom.pred)
            node = PlanNode("Difference", lit.atom.pred, [node, scan] if node else [scan])
        elif isinstance(lit, Cmp):
            node = PlanNode("Filter", lit.op, [node] if node else [])
        elif isinstance(lit, Bind):
            node = PlanNode("Project", f"bind {lit.var.name}", [node] if node else [])
        elif isinstance(lit, Agg):
            node = PlanNode("Aggregate", lit.fn, [node] if node else [])
    head = PlanNode("Project", rule.head.pred, [node] if node else [])
    return head


def _stage_operators(rules: list[Rule], comp_sets: list[set[str]]) -> list[PlanNode]:
    operators: list[PlanNode] = []
    for comp in comp_sets:
        comp_rules = [r for r in rules if r.head.pred in comp]
        if not comp_rules:
            continue
        by_head: dict[str, list[PlanNode]] = {}
        for rule in comp_rules:
            by_head.setdefault(rule.head.pred, []).append(_rule_operators(rule))
        roots = [
            nodes[0] if len(nodes) == 1 else PlanNode("Union", head, nodes)
            for head, nodes in sorted(by_head.items())
        ]
        recursive = _comp_is_recursive(comp_rules, comp)
        if recursive:
            operators.append(PlanNode("FixpointLoop", ",".join(sorted(comp)), roots))
        else:
            operators.extend(roots)
    return operators


def _comp_is_recursive(rules: list[Rule], comp: set[str]) -> bool:
    for rule in rules:
        for a, _ in (pair for lit in rule.body for pair in literal_atoms(lit)):
            if a.pred in comp:
                return True
    return False


def _count_operators(program: DatalogProgram) -> int:
    strat = stratify(program)
    total = 0
    for stratum in strat.strata:
        members = set(stratum)
        comp_sets = [set(c) for c in strat.sccs if c[0] in members]
        rules = [r for r in program.rules if r.head.pred in members]
        total += sum(op.count() for op in _stage_operators(rules, comp_sets))
    return total


def stats_from_manifest(manifest: Manifest | None) -> dict[str, int]:
    if manifest is None:
        return {}
    return {entry.name: entry.row_count for entry in manifest.relations}


def lower_to_plan(
    program: DatalogProgram,
    stats: Manifest | dict[str, int] | None = None,
    node_count_before: int | None = None,
) -> ExecutionPlan:
    """Lower a safe, stratified, pruned program to a staged plan."""
    cardinality = (
        stats_from_manifest(stats) if isinstance(stats, (Manifest, type(None))) else dict(stats)
    )
    ordered = DatalogProgram(
        predicates=dict(program.predicates),
        rules=[order_joins(r, cardinality) for r in program.rules],
        outputs=list(program.outputs),
        output_columns=dict(program.output_columns),
    )
    strat = stratify(ordered)
    stages: list[Stage] = []
    for index, stratum in enumerate(strat.strata):
        members = set(stratum)
        comp_sets = [set(c) for c in strat.sccs if c[0] in members]
        rules = [r for r in ordered.rules if r.head.pred in members]
        operators = _stage_operators(rules, comp_sets)
        recursive = any(op.kind == "FixpointLoop" for op in operators)
        stages.append(Stage(index, list(stratum), operators, recursive))
    after = sum(stage.node_count() for stage in stages)
    return ExecutionPlan(
        stages=stages,
        node_count_before=node_count_before if node_count_before is not None else after,
        node_count_after=after,
        program=ordered,
        stratification=strat,
    )


def plan_program(
    program: DatalogProgram, stats: Manifest | dict[str, int] | None = None
) -> ExecutionPlan:
    """Full pipeline: safety check, count, prune, order joins, stage."""
    program.validate()
    diagnostics = check_safety(program)
    if diagnostics:
        raise DatalogError("unsafe program: " + "; ".join(diagnostics))
    before = _count_operators(program)
    pruned = prune_unreachable(program)
    return lower_to_plan(pruned, stats, node_count_before=before)
