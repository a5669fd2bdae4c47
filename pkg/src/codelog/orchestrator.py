"""Single-node task running: pools, cost estimates, caching, metrics.

Tasks run on a standard pool with a per-task time limit; a task that hits
the limit is cancelled at a stage boundary and resubmitted once to the
long-run pool. Cost estimates pre-route expensive tasks there directly.
Query results are cached on disk keyed by the content of the relations
the pruned plan actually reads.
"""

from __future__ import annotations

import hashlib
import json
import logging
import resource
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__

logger = logging.getLogger(__name__)

# Part of every cache key: results computed by different engine versions
# never alias.
ENGINE_VERSION = __version__

TASK_KINDS = ("EXTRACT", "FRA", "IFRA", "DCA")


class StageTimeout(Exception):
    """Raised by the stage guard when a task exceeds its time limit."""


@dataclass
class Task:
    id: str
    kind: str
    repo_id: str = ""
    commit_id: str = ""
    language: str = ""
    baseline_commit: str | None = None
    query_source_hash: str | None = None
    changed_files: set[str] | None = None
    time_limit: float = 3600.0
    estimated_cost: float = 0.0


@dataclass
class RunMetrics:
    task_id: str
    kind: str
    status: str = "ok"  # ok | timeout | error
    wall_seconds: float = 0.0
    peak_mem_kb: int = 0
    cache_hit: bool = False
    nodes_before: int = 0
    nodes_after: int = 0
    files_total: int = 0
    files_extracted: int = 0
    files_carried: int = 0
    stages_executed: int = 0
    rerouted: bool = False
    pool: str = "standard"
    date: str = ""
    timestamp: float = 0.0

    def finalize(self) -> "RunMetrics":
        now = datetime.now(timezone.utc)
        self.date = self.date or now.strftime("%Y-%m-%d")
        self.timestamp = self.timestamp or now.timestamp()
        self.peak_mem_kb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
        return self

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


@dataclass
class OrchestratorConfig:
    standard_workers: int = 4
    longrun_workers: int = 1
    time_limit: float = 3600.0
    longrun_time_limit: float = 14400.0
    hdt_cost_threshold: float = 5_000_000.0
    cache_budget_bytes: int = 64 * 1024 * 1024
    cost_constants: dict = field(
        default_factory=lambda: {
            "python": {"alpha": 1.0, "beta": 10.0},
            "xml": {"alpha": 0.5, "beta": 5.0},
        }
    )

    @staticmethod
    def load(path: str | Path | None) -> "OrchestratorConfig":
        config = OrchestratorConfig()
        if path is None:
            return config
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        for key in (
            "standard_workers", "longrun_workers", "time_limit",
            "longrun_time_limit", "hdt_cost_threshold", "cache_budget_bytes",
        ):
            if key in doc:
                setattr(config, key, doc[key])
        if "cost_constants" in doc:
            config.cost_constants.update(doc["cost_constants"])
        return config


def estimate_cost(manifest, language: str, config: OrchestratorConfig) -> float:
    """alpha * total lines + beta * file count; +inf without a manifest."""
    if manifest is None:
        return float("inf")
    constants = config.cost_constants.get(language, {"alpha": 1.0, "beta": 10.0})
    total_lines = sum(f.line_count for f in manifest.files)
    return constants["alpha"] * total_lines + constants["beta"] * len(manifest.files)


def classify(task: Task, store, cache: "ResultCache | None", cache_key: str | None):
    """Effective task kind plus rationale; flags cache short-circuits."""
    if task.kind == "DCA":
        return "DCA", "delta analysis as requested", False
    if cache is not None and cache_key is not None and cache.lookup(cache_key) is not None:
        return task.kind, "result cache holds this (relations, query) digest", True
    if task.kind == "FRA" and task.baseline_commit:
        baseline = store.get(task.repo_id, task.baseline_commit, task.language)
        if baseline is not None:
            return (
                "IFRA",
                f"baseline snapshot {task.baseline_commit} present; "
                "extraction carries unchanged files over",
                False,
            )
    return task.kind, f"{task.kind} as requested", False


# ---------------------------------------------------------------------------
# Result cache: content-addressed, on-disk, LRU by byte budget.


class ResultCache:
    def __init__(self, directory: str | Path, byte_budget: int = 64 * 1024 * 1024):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.byte_budget = byte_budget
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.dir / f"{key}.entry"

    def lookup(self, key: str) -> bytes | None:
        path = self._path(key)
        try:
            blob = path.read_bytes()
        except OSError:
            return None
        digest, _, payload = blob.partition(b"\n")
        if hashlib.sha256(payload).hexdigest().encode() != digest:
            logger.warning("dropping corrupted cache entry %s", key[:16])
            try:
                path.unlink()
            except OSError:
                pass
            return None
        now = time.time()
        try:
            import os

            os.utime(path, (now, now))
        except OSError:
            pass
        return payload

    def store(self, key: str, payload: bytes) -> None:
        with self._lock:
            path = self._path(key)
            blob = hashlib.sha256(payload).hexdigest().encode() + b"\n" + payload
            path.write_bytes(blob)
            self._evict()

    def _evict(self) -> None:
        entries = [(p.stat().st_mtime, p.stat().st_size, p) for p in self.dir.glob("*.entry")]
        total = sum(size for _, size, _ in entries)
        if total <= self.byte_budget:
            return
        for _, size, path in sorted(entries):
            if total <= self.byte_budget:
                break
            try:
                path.unlink()
                total -= size
            except OSError:
                pass


# ---------------------------------------------------------------------------
# Worker pools with stage-boundary cancellation and one reroute.


@dataclass
class PoolConfig:
    standard_workers: int = 4
    longrun_workers: int = 1
    time_limit: float = 3600.0
    longrun_time_limit: float = 14400.0


class WorkerPools:
    """A standard pool and an optional long-run pool.

    Work items are callables taking a cancel check; the check raises
    StageTimeout past the deadline and items are expected to call it at
    stage boundaries (evaluation does this between strata).
    """

    def __init__(self, config: PoolConfig):
        self.config = config
        self.standard = ThreadPoolExecutor(
            max_workers=config.standard_workers, thread_name_prefix="std"
        )
        self.longrun = (
            ThreadPoolExecutor(max_workers=config.longrun_workers, thread_name_prefix="long")
            if config.longrun_workers > 0
            else None
        )

    def shutdown(self) -> None:
        self.standard.shutdown(wait=True)
        if self.longrun is not None:
            self.longrun.shutdown(wait=True)

    @staticmethod
    def _guard(deadline: float):
        def check(*_args) -> None:
            if time.monotonic() > deadline:
                raise StageTimeout()

        return check

    def _attempt(self, work, limit: float):
        deadline = time.monotonic() + limit
        return work(self._guard(deadline))

    def run(self, task: Task, work, prefer_longrun: bool = False):
        """Returns (status, result, pool_name, rerouted)."""
        if prefer_longrun and self.longrun is not None:
            future = self.longrun.submit(
                self._attempt, work, self.config.longrun_time_limit
            )
            try:
                return "ok", future.result(), "longrun", False
            except StageTimeout:
                return "timeout", None, "longrun", False
        future = self.standard.submit(self._attempt, work, self.config.time_limit)
        try:
            return "ok", future.result(), "standard", False
        except StageTimeout:
            if self.longrun is None:
                return "timeout", None, "standard", False
            logger.info("task %s exceeded %.1fs, rerouting", task.id, self.config.time_limit)
            retry = self.longrun.submit(
                self._attempt, work, self.config.longrun_time_limit
            )
            try:
                return "ok", retry.result(), "longrun", True
            except StageTimeout:
                return "timeout", None, "longrun", True


# ---------------------------------------------------------------------------
# Metrics log and the reuse report.


class MetricsLog:
    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def record(self, metrics: RunMetrics) -> None:
        line = metrics.finalize().to_json() + "\n"
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as handle:
                handle.write(line)

    def read(self) -> list[dict]:
        if not self.path.is_file():
            return []
        out = []
        for lineno, line in enumerate(self.path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"metrics log line {lineno} is not valid JSON") from exc
        return out


@dataclass
class ReuseRow:
    day: str
    queries: float
    extractions: float

    @property
    def ratio(self) -> float | None:
        if self.extractions == 0:
            return None
        return self.queries / self.extractions


def reuse_report(records: list[dict], window_days: int | None = None) -> list[ReuseRow]:
    """Per-day query and extraction counts; the last row is the average.

    The average row holds per-day means, so its ratio equals the aggregate
    queries/extractions ratio exactly.
    """
    if window_days is not None and records:
        latest = max(r.get("timestamp", 0) for r in records)
        cutoff = latest - window_days * 86400
        records = [r for r in records if r.get("timestamp", 0) >= cutoff]
    days: dict[str, list[int]] = {}
    for record in records:
        day = record.get("date", "")
        counts = days.setdefault(day, [0, 0])
        if record.get("kind") == "EXTRACT":
            counts[1] += 1
        elif record.get("kind") in ("FRA", "IFRA", "DCA"):
            counts[0] += 1
    rows = [ReuseRow(day, q, e) for day, (q, e) in sorted(days.items())]
    if rows:
        n = len(rows)
        rows.append(
            ReuseRow(
                "avg",
                sum(r.queries for r in rows) / n,
                sum(r.extractions for r in rows) / n,
            )
        )
    return rows


def format_reuse_report(rows: list[ReuseRow]) -> str:
    lines = ["day\tqueries\textractions\tratio"]
    for row in rows:
        ratio = "n/a" if row.ratio is None else f"{row.ratio:.1f}"
        lines.append(f"{row.day}\t{row.queries:g}\t{row.extractions:g}\t{ratio}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Synthetic workloads for scheduling experiments.


@dataclass
class SyntheticTask:
    id: str
    stages: int
    stage_seconds: float

    @property
    def duration(self) -> float:
        return self.stages * self.stage_seconds

    def work(self, cancel_check) -> int:
        for stage in range(self.stages):
            cancel_check(stage, ())
            time.sleep(self.stage_seconds)
        return self.stages


@dataclass
class WorkloadReport:
    makespan: float
    timeouts: int
    reroutes: int
    statuses: dict[str, str]


def run_workload(
    tasks: list[SyntheticTask],
    pool_config: PoolConfig,
    strategy: str,
    hdt_threshold: float,
) -> WorkloadReport:
    """Run a synthetic workload under a dispatch strategy.

    "fifo" queues everything on the standard pool in list order and relies
    on the timeout-reroute fallback; "coordinator" pre-routes tasks whose
    estimated duration crosses the threshold to the long-run pool. Queue
    order is the task list order, so runs are comparable.
    """
    if strategy not in ("fifo", "coordinator"):
        raise ValueError(f"unknown strategy {strategy!r}")
    from concurrent.futures import FIRST_COMPLETED, wait as wait_futures

    pools = WorkerPools(pool_config)
    statuses: dict[str, str] = {}
    reroutes = 0
    start = time.monotonic()

    pending = {}
    for task in tasks:
        prefer = strategy == "coordinator" and task.duration >= hdt_threshold
        if prefer and pools.longrun is not None:
            future = pools.longrun.submit(
                pools._attempt, task.work, pool_config.longrun_time_limit
            )
            pending[future] = (task, "longrun", False)
        else:
            future = pools.standard.submit(
                pools._attempt, task.work, pool_config.time_limit
            )
            pending[future] = (task, "standard", False)

    while pending:
        done, _ = wait_futures(list(pending), return_when=FIRST_COMPLETED)
        for future in done:
            task, pool, was_rerouted = pending.pop(future)
            try:
                future.result()
                statuses[task.id] = "ok"
            except StageTimeout:
                if pool == "standard" and not was_rerouted and pools.longrun is not None:
                    retry = pools.longrun.submit(
                        pools._attempt, task.work, pool_config.longrun_time_limit
                    )
                    pending[retry] = (task, "longrun", True)
                    reroutes += 1
                else:
                    statuses[task.id] = "timeout"

    makespan = time.monotonic() - start
    pools.shutdown()
    timeouts = sum(1 for s in statuses.values() if s == "timeout")
    return WorkloadReport(makespan, timeouts, reroutes, statuses)
