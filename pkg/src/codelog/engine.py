"""Query execution pipeline: compile, plan, cache, evaluate, render.

One entry point for full, incremental, and delta analysis runs. Output
rendering is canonical (sorted rows, escaped TSV), so identical snapshots
and scripts produce byte-identical stdout with or without the cache.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass

from .datalog.evaluate import EvalStats, evaluate_seminaive
from .datalog.ir import DatalogError, DatalogProgram, literal_atoms
from .facts import FactsArchive, escape_str, render_relation
from .godel import compile_script
from .orchestrator import (
    ENGINE_VERSION,
    ResultCache,
    RunMetrics,
    Task,
    WorkerPools,
)
from .planner import ExecutionPlan, plan_program


class ScriptError(Exception):
    """A script failed to compile or plan (reported as an input error)."""


@dataclass
class QueryOutcome:
    status: str  # ok | timeout
    stdout: bytes
    metrics: RunMetrics
    plan: ExecutionPlan | None = None


def source_hash(source: str) -> str:
    return hashlib.sha256(source.encode("utf-8")).hexdigest()


def archive_digests(archive: FactsArchive) -> dict[str, str]:
    """Per-relation digests of the canonical serialized bytes."""
    return {
        name: hashlib.sha256(render_relation(rel)).hexdigest()
        for name, rel in archive.relations.items()
    }


def edb_reads(program: DatalogProgram) -> list[str]:
    """EDB relations the (pruned) program actually reads."""
    edb = set(program.edb_names())
    reads = set()
    for rule in program.rules:
        for atom, _ in (pair for lit in rule.body for pair in literal_atoms(lit)):
            if atom.pred in edb:
                reads.add(atom.pred)
    return sorted(reads)


def cache_key_for(
    archive: FactsArchive, program: DatalogProgram, query_hash: str
) -> str:
    digests = archive_digests(archive)
    hasher = hashlib.sha256()
    hasher.update(ENGINE_VERSION.encode())
    hasher.update(b"\x00")
    hasher.update(query_hash.encode())
    for name in edb_reads(program):
        hasher.update(b"\x00" + name.encode() + b"=")
        hasher.update(digests.get(name, "absent").encode())
    return hasher.hexdigest()


def _sort_key(row: tuple):
    return tuple((0, v) if isinstance(v, int) else (1, v) for v in row)


def result_payload(
    program: DatalogProgram, idb: dict[str, set[tuple]]
) -> dict:
    payload = {}
    for name in program.outputs:
        columns = list(
            program.output_columns.get(name)
            or [f"c{i}" for i in range(program.predicates[name].arity)]
        )
        rows = sorted(idb.get(name, set()), key=_sort_key)
        payload[name] = {"columns": columns, "rows": [list(r) for r in rows]}
    return payload


def render_tsv(payload: dict) -> bytes:
    lines = []
    for name in payload:
        for row in payload[name]["rows"]:
            lines.append(
                "\t".join(
                    str(v) if isinstance(v, int) else escape_str(v) for v in row
                )
            )
    if not lines:
        return b""
    return ("\n".join(lines) + "\n").encode("utf-8")


def render_json(payload: dict) -> bytes:
    def rows_of(entry):
        return [dict(zip(entry["columns"], row)) for row in entry["rows"]]

    if len(payload) == 1:
        doc = rows_of(next(iter(payload.values())))
    else:
        doc = {name: rows_of(entry) for name, entry in payload.items()}
    return (json.dumps(doc, indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def render_payload(payload: dict, fmt: str) -> bytes:
    if fmt == "json":
        return render_json(payload)
    return render_tsv(payload)


def execute_query(
    source: str,
    archive: FactsArchive,
    *,
    task_id: str = "query",
    kind: str = "FRA",
    fmt: str = "tsv",
    cache: ResultCache | None = None,
    use_cache: bool = True,
    pools: WorkerPools | None = None,
    verify_cache: bool = False,
) -> QueryOutcome:
    """Compile and run a script against an archive.

    With a cache, a hit skips evaluation entirely (stages_executed stays
    0); verify_cache re-evaluates anyway and asserts the cached result
    matches, which is how cache-key soundness is audited.
    """
    start = time.monotonic()
    language = archive.manifest.subject_language
    program, _typed = compile_script(source, language)
    try:
        plan = plan_program(program, archive.manifest)
    except DatalogError as exc:
        raise ScriptError(str(exc)) from exc
    metrics = RunMetrics(task_id=task_id, kind=kind)
    metrics.nodes_before = plan.node_count_before
    metrics.nodes_after = plan.node_count_after

    key = None
    if cache is not None and use_cache:
        key = cache_key_for(archive, plan.program, source_hash(source))
        hit = cache.lookup(key)
        if hit is not None:
            payload = json.loads(hit.decode("utf-8"))
            if verify_cache:
                fresh = _evaluate(plan, archive, None, metrics)
                if fresh != payload:
                    raise AssertionError("cache verification failed: stale entry")
            metrics.cache_hit = True
            metrics.wall_seconds = time.monotonic() - start
            return QueryOutcome("ok", render_payload(payload, fmt), metrics, plan)

    stats = EvalStats()
    if pools is None:
        payload = _evaluate(plan, archive, None, metrics, stats)
    else:
        task = Task(id=task_id, kind=kind, query_source_hash=source_hash(source))

        def work(cancel_check):
            inner = EvalStats()
            result = _evaluate(plan, archive, cancel_check, metrics, inner)
            return result, inner

        status, outcome, pool, rerouted = pools.run(task, work)
        metrics.pool = pool
        metrics.rerouted = rerouted
        if status != "ok":
            metrics.status = "timeout"
            metrics.wall_seconds = time.monotonic() - start
            return QueryOutcome("timeout", b"", metrics, plan)
        payload, stats = outcome

    metrics.stages_executed = stats.stages_executed
    if cache is not None and use_cache and key is not None:
        # Top-level key order is the output order; keep it so cached and
        # fresh runs render byte-identical stdout.
        cache.store(key, json.dumps(payload).encode("utf-8"))
    metrics.wall_seconds = time.monotonic() - start
    return QueryOutcome("ok", render_payload(payload, fmt), metrics, plan)


def _evaluate(plan, archive, stage_hook, metrics, stats: EvalStats | None = None):
    idb = evaluate_seminaive(
        plan.program, archive.relations, stage_hook=stage_hook, stats=stats
    )
    return result_payload(plan.program, idb)
