"""Command-line surface: extract, query, delta, plan, report.

Result rows go to stdout only; diagnostics, timings, and progress go to
stderr. Exit codes are stable: 0 ok, 1 usage error, 2 input/parse error,
3 evaluation error, 4 timeout, 5 busy lease.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

from .datalog.ir import DatalogError, EvalError
from .engine import QueryOutcome, ScriptError, execute_query, source_hash
from .facts import FactsError, read_archive
from .godel import (
    CatalogError,
    GodelSyntaxError,
    LoweringError,
    TypeError_,
    compile_script,
)
from .incremental import (
    BusyError,
    SnapshotStore,
    full_extract,
    incremental_extract,
    restrict_to_changed,
)
from .orchestrator import (
    ENGINE_VERSION,
    MetricsLog,
    OrchestratorConfig,
    PoolConfig,
    ResultCache,
    RunMetrics,
    WorkerPools,
    format_reuse_report,
    reuse_report,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_EVAL = 3
EXIT_TIMEOUT = 4
EXIT_BUSY = 5

STORE_ENV = "CODELOG_STORE"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _store_root(args) -> Path | None:
    if getattr(args, "store", None):
        return Path(args.store)
    env = os.environ.get(STORE_ENV)
    return Path(env) if env else None


def _info(message: str) -> None:
    print(message, file=sys.stderr)


def build_parser() -> _Parser:
    parser = _Parser(prog="codelog", description="Relational code analysis")
    parser.add_argument("--version", action="version", version=f"codelog {ENGINE_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract facts from a worktree into the store")
    p.add_argument("--lang", required=True, choices=["python", "xml"])
    p.add_argument("--repo", required=True, help="worktree directory (or a single file)")
    p.add_argument("--commit", required=True)
    p.add_argument("--store", help=f"store root (or ${STORE_ENV})")
    p.add_argument("--baseline", help="baseline commit for incremental extraction")
    p.add_argument("--repo-id", help="repository id (default: worktree basename)")

    p = sub.add_parser("query", help="run a .gdl script against a snapshot")
    p.add_argument("--db", help="facts archive directory")
    p.add_argument("--store", help=f"store root (or ${STORE_ENV})")
    p.add_argument("--repo", help="repository id within the store")
    p.add_argument("--commit", help="commit id within the store")
    p.add_argument("--script", required=True)
    p.add_argument("--format", choices=["tsv", "json"], default="tsv")
    p.add_argument("--no-cache", action="store_true")
    p.add_argument("--time-limit", type=float, default=None)

    p = sub.add_parser("delta", help="delta analysis restricted to changed files")
    p.add_argument("--store", help=f"store root (or ${STORE_ENV})")
    p.add_argument("--db", help="facts archive directory")
    p.add_argument("--repo", help="repository id within the store")
    p.add_argument("--commit", help="commit id within the store")
    p.add_argument("--changed", required=True, help="file listing changed paths, one per line")
    p.add_argument("--script", required=True)
    p.add_argument("--format", choices=["tsv", "json"], default="tsv")

    p = sub.add_parser("plan", help="show the staged execution plan of a script")
    p.add_argument("--script", required=True)
    p.add_argument("--lang", required=True, choices=["python", "xml"])

    p = sub.add_parser("report", help="reuse statistics from a metrics log")
    p.add_argument("--metrics", required=True)
    p.add_argument("--window", type=int, default=None, help="restrict to the last N days")

    return parser


def _resolve_archive(args):
    """(archive, store_root or None). Accepts --db or --store/--repo/--commit."""
    if getattr(args, "db", None):
        return read_archive(args.db), _store_root(args)
    root = _store_root(args)
    if root is None or not args.repo or not args.commit:
        raise FactsError("need --db, or --store with --repo and --commit")
    store = SnapshotStore(root)
    snapshot = None
    for language in ("python", "xml"):
        snapshot = store.get(args.repo, args.commit, language)
        if snapshot is not None:
            break
    if snapshot is None:
        raise FactsError(f"no snapshot for {args.repo}@{args.commit} in {root}")
    return snapshot.archive, root


def cmd_extract(args) -> int:
    root = _store_root(args)
    if root is None:
        _info("extract: need --store or $" + STORE_ENV)
        return EXIT_USAGE
    worktree = Path(args.repo)
    files = None
    if worktree.is_file():
        # single-file scans treat the file as a one-file repository
        files = [worktree.name]
        worktree = worktree.parent
    elif not worktree.is_dir():
        _info(f"extract: worktree {worktree} does not exist")
        return EXIT_INPUT
    repo_id = args.repo_id or worktree.name
    store = SnapshotStore(root)

    start = time.monotonic()
    from .orchestrator import Task, classify

    task = Task(
        id=f"extract-{repo_id}@{args.commit}",
        kind="FRA",
        repo_id=repo_id,
        commit_id=args.commit,
        language=args.lang,
        baseline_commit=args.baseline,
    )
    effective, rationale, _ = classify(task, store, None, None)
    _info(f"classified as {effective}: {rationale}")
    baseline = None
    if effective == "IFRA":
        baseline = store.get(repo_id, args.baseline, args.lang)
    elif args.baseline:
        _info(f"extract: baseline {args.baseline} not found; running full extraction")
    if baseline is not None:
        snapshot, stats = incremental_extract(store, baseline, worktree, args.commit)
        kind = "IFRA"
    else:
        if files is not None:
            from .extractors.merge import extract_worktree
            from .facts import FactsArchive, write_archive

            with store.acquire_lease(repo_id, args.commit, args.lang):
                existing = store.get(repo_id, args.commit, args.lang)
                if existing is None:
                    result = extract_worktree(args.lang, worktree, files)
                    archive = FactsArchive.build(
                        args.lang, repo_id, args.commit, result.file_entries, result.relations
                    )
                    dest = store.snapshot_dir(repo_id, args.lang, args.commit)
                    dest.parent.mkdir(parents=True, exist_ok=True)
                    write_archive(archive, dest)
            snapshot = store.get(repo_id, args.commit, args.lang)
            from .incremental import ExtractStats

            stats = ExtractStats(len(files), len(files), 0, time.monotonic() - start)
        else:
            snapshot, stats = full_extract(store, worktree, repo_id, args.commit, args.lang)
        kind = "EXTRACT"

    metrics = RunMetrics(task_id=f"extract-{repo_id}@{args.commit}", kind="EXTRACT")
    metrics.files_total = stats.total_files
    metrics.files_extracted = stats.extracted
    metrics.files_carried = stats.carried
    metrics.wall_seconds = stats.wall_seconds
    MetricsLog(root / "metrics.jsonl").record(metrics)

    print(snapshot.path)
    _info(
        f"{kind.lower()}: files total: {stats.total_files}, "
        f"re-extracted: {stats.extracted}, carried: {stats.carried}"
    )
    if stats.parse_failures:
        _info(f"warning: {stats.parse_failures} file(s) failed to parse (see diagnostic relation)")
    _info(f"wall time: {stats.wall_seconds:.2f}s")
    return EXIT_OK


def _run_script(args, archive, root, kind: str, use_cache: bool, script_source: str) -> int:
    config = OrchestratorConfig()
    cache = None
    metrics_log = None
    if root is not None:
        cache = ResultCache(root / "cache", config.cache_budget_bytes)
        metrics_log = MetricsLog(root / "metrics.jsonl")
    pools = None
    if getattr(args, "time_limit", None):
        pools = WorkerPools(
            PoolConfig(
                standard_workers=1,
                longrun_workers=config.longrun_workers,
                time_limit=args.time_limit,
                longrun_time_limit=config.longrun_time_limit,
            )
        )
    task_id = f"{kind.lower()}-{source_hash(script_source)[:12]}"
    try:
        outcome: QueryOutcome = execute_query(
            script_source,
            archive,
            task_id=task_id,
            kind=kind,
            fmt=args.format,
            cache=cache,
            use_cache=use_cache,
            pools=pools,
        )
    except (EvalError, DatalogError):
        if metrics_log is not None:
            failed = RunMetrics(task_id=task_id, kind=kind, status="error")
            metrics_log.record(failed)
        raise
    finally:
        if pools is not None:
            pools.shutdown()
    if metrics_log is not None:
        metrics_log.record(outcome.metrics)
    if outcome.status == "timeout":
        _info("query: timed out on both pools")
        return EXIT_TIMEOUT
    sys.stdout.buffer.write(outcome.stdout)
    sys.stdout.buffer.flush()
    if outcome.metrics.cache_hit:
        _info("cache: hit (evaluation skipped)")
    _info(
        f"plan nodes: {outcome.metrics.nodes_before} -> {outcome.metrics.nodes_after}; "
        f"wall time: {outcome.metrics.wall_seconds:.2f}s"
    )
    return EXIT_OK


def cmd_query(args) -> int:
    archive, root = _resolve_archive(args)
    script_source = Path(args.script).read_text(encoding="utf-8")
    return _run_script(args, archive, root, "FRA", not args.no_cache, script_source)


def cmd_delta(args) -> int:
    archive, root = _resolve_archive(args)
    changed = {
        line.strip()
        for line in Path(args.changed).read_text(encoding="utf-8").splitlines()
        if line.strip()
    }
    restricted = restrict_to_changed(archive, changed)
    script_source = Path(args.script).read_text(encoding="utf-8")
    args.format = getattr(args, "format", "tsv")
    args.time_limit = None
    return _run_script(args, restricted, root, "DCA", True, script_source)


def cmd_plan(args) -> int:
    from .planner import plan_program

    source = Path(args.script).read_text(encoding="utf-8")
    program, _ = compile_script(source, args.lang)
    plan = plan_program(program)
    sys.stdout.write(plan.render(show_rules=True))
    return EXIT_OK


def cmd_report(args) -> int:
    log = MetricsLog(args.metrics)
    try:
        records = log.read()
    except (ValueError, OSError) as exc:
        _info(f"report: {exc}")
        return EXIT_INPUT
    rows = reuse_report(records, args.window)
    sys.stdout.write(format_reuse_report(rows))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE

    handlers = {
        "extract": cmd_extract,
        "query": cmd_query,
        "delta": cmd_delta,
        "plan": cmd_plan,
        "report": cmd_report,
    }
    try:
        return handlers[args.command](args)
    except BusyError as exc:
        _info(f"busy: {exc}")
        return EXIT_BUSY
    except (GodelSyntaxError, TypeError_) as exc:
        for diagnostic in exc.diagnostics:
            _info(f"{getattr(args, 'script', '<script>')}:{diagnostic}")
        return EXIT_INPUT
    except (FactsError, CatalogError, ScriptError, LoweringError, FileNotFoundError) as exc:
        _info(f"input error: {exc}")
        return EXIT_INPUT
    except (EvalError, DatalogError) as exc:
        _info(f"evaluation error: {exc}")
        return EXIT_EVAL


if __name__ == "__main__":
    raise SystemExit(main())
