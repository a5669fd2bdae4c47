"""Snapshot lifecycle: full and incremental extraction, leases, deltas.

A snapshot is one facts archive per (repo, commit, language) under the
store root. Incremental extraction re-runs the extractor only on added
and changed files and carries every other file's rows over verbatim from
the baseline; because node ids depend only on a file's bytes and path,
the result is byte-identical to a full extraction of the same worktree.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from urllib.parse import quote

from .extractors.merge import discover_files, extract_file, merge_file_facts
from .facts import (
    FactsArchive,
    FactsError,
    FileEntry,
    Relation,
    content_hash,
    read_archive,
    write_archive,
)
from .tier1 import (
    CHANGED_FILE_SCHEMA,
    partition_rows_by_file,
    tier1_schemas,
    validate_referential_integrity,
)

logger = logging.getLogger(__name__)

DEFAULT_LEASE_TIMEOUT = 3600.0  # seconds; stale leases are taken over


class BusyError(Exception):
    """Another extraction holds the lease for this (repo, commit, language)."""


@dataclass
class ExtractStats:
    total_files: int
    extracted: int
    carried: int
    wall_seconds: float
    parse_failures: int = 0


@dataclass
class Snapshot:
    repo_id: str
    commit_id: str
    language: str
    path: Path
    baseline_commit: str | None = None
    created_at: str = ""

    _archive: FactsArchive | None = None

    @property
    def archive(self) -> FactsArchive:
        if self._archive is None:
            self._archive = read_archive(self.path)
        return self._archive


class Lease:
    def __init__(self, path: Path):
        self.path = path
        self.released = False

    def release(self) -> None:
        if not self.released:
            try:
                self.path.unlink()
            except FileNotFoundError:
                pass
            self.released = True

    def __enter__(self) -> "Lease":
        return self

    def __exit__(self, *exc) -> None:
        self.release()


class SnapshotStore:
    """Filesystem store of snapshots with per-key extraction leases."""

    def __init__(self, root: str | Path, lease_timeout: float = DEFAULT_LEASE_TIMEOUT):
        self.root = Path(root)
        self.lease_timeout = lease_timeout
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "leases").mkdir(exist_ok=True)

    def snapshot_dir(self, repo_id: str, language: str, commit_id: str) -> Path:
        return self.root / quote(repo_id, safe="") / language / quote(commit_id, safe="")

    def get(self, repo_id: str, commit_id: str, language: str) -> Snapshot | None:
        path = self.snapshot_dir(repo_id, language, commit_id)
        if not (path / "manifest.json").is_file():
            return None
        meta = {}
        meta_path = path / "snapshot.json"
        if meta_path.is_file():
            try:
                meta = json.loads(meta_path.read_text(encoding="utf-8"))
            except json.JSONDecodeError:
                meta = {}
        return Snapshot(
            repo_id=repo_id,
            commit_id=commit_id,
            language=language,
            path=path,
            baseline_commit=meta.get("baseline_commit"),
            created_at=meta.get("created_at", ""),
        )

    def snapshots(self, repo_id: str, language: str) -> list[Snapshot]:
        base = self.root / quote(repo_id, safe="") / language
        if not base.is_dir():
            return []
        out = []
        for child in sorted(base.iterdir()):
            snap = self.get(repo_id, child.name, language)
            if snap is not None:
                out.append(snap)
        return out

    def gc(self, repo_id: str, language: str, keep: list[str]) -> int:
        """Drop snapshots not in `keep`; returns the number removed."""
        import shutil

        removed = 0
        for snap in self.snapshots(repo_id, language):
            if snap.commit_id not in keep:
                shutil.rmtree(snap.path)
                removed += 1
        return removed

    # -- leases

    def _lease_path(self, repo_id: str, commit_id: str, language: str) -> Path:
        key = "__".join(quote(part, safe="") for part in (repo_id, language, commit_id))
        return self.root / "leases" / f"{key}.lock"

    def acquire_lease(self, repo_id: str, commit_id: str, language: str) -> Lease:
        path = self._lease_path(repo_id, commit_id, language)
        payload = json.dumps(
            {"pid": os.getpid(), "acquired_at": time.time()}
        ).encode("utf-8")
        for attempt in range(2):
            try:
                fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                with os.fdopen(fd, "wb") as handle:
                    handle.write(payload)
                return Lease(path)
            except FileExistsError:
                if attempt == 0 and self._lease_stale(path):
                    logger.warning("taking over stale lease %s", path.name)
                    try:
                        path.unlink()
                    except FileNotFoundError:
                        pass
                    continue
                raise BusyError(
                    f"extraction already running for {repo_id}@{commit_id} ({language})"
                ) from None
        raise BusyError(f"could not acquire lease for {repo_id}@{commit_id}")

    def _lease_stale(self, path: Path) -> bool:
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
            acquired = float(doc.get("acquired_at", 0))
        except (OSError, json.JSONDecodeError, ValueError):
            return True
        return time.time() - acquired > self.lease_timeout


def _write_snapshot_meta(path: Path, baseline_commit: str | None) -> None:
    meta = {
        "baseline_commit": baseline_commit,
        "created_at": datetime.now(timezone.utc).isoformat(),
    }
    (path / "snapshot.json").write_text(
        json.dumps(meta, indent=2) + "\n", encoding="utf-8"
    )


def full_extract(
    store: SnapshotStore,
    worktree: str | Path,
    repo_id: str,
    commit_id: str,
    language: str,
) -> tuple[Snapshot, ExtractStats]:
    start = time.monotonic()
    with store.acquire_lease(repo_id, commit_id, language):
        existing = store.get(repo_id, commit_id, language)
        if existing is not None:
            logger.info("snapshot %s@%s already present", repo_id, commit_id)
            n = len(existing.archive.manifest.files)
            return existing, ExtractStats(n, 0, n, time.monotonic() - start)
        from .extractors.merge import extract_worktree

        result = extract_worktree(language, worktree)
        archive = FactsArchive.build(
            language, repo_id, commit_id, result.file_entries, result.relations
        )
        dest = store.snapshot_dir(repo_id, language, commit_id)
        dest.parent.mkdir(parents=True, exist_ok=True)
        write_archive(archive, dest)
        _write_snapshot_meta(dest, None)
    snap = store.get(repo_id, commit_id, language)
    snap._archive = archive
    stats = ExtractStats(
        total_files=len(result.file_entries),
        extracted=result.files_extracted,
        carried=0,
        wall_seconds=time.monotonic() - start,
        parse_failures=result.parse_failures,
    )
    return snap, stats


def incremental_extract(
    store: SnapshotStore,
    baseline: Snapshot,
    worktree: str | Path,
    commit_id: str,
) -> tuple[Snapshot, ExtractStats]:
    start = time.monotonic()
    language = baseline.language
    repo_id = baseline.repo_id

    baseline_archive = baseline.archive
    expected = set(tier1_schemas(language))
    if not expected <= set(baseline_archive.relations):
        logger.warning(
            "baseline %s@%s lacks relations; falling back to full extraction",
            repo_id, baseline.commit_id,
        )
        return full_extract(store, worktree, repo_id, commit_id, language)

    with store.acquire_lease(repo_id, commit_id, language):
        existing = store.get(repo_id, commit_id, language)
        if existing is not None:
            n = len(existing.archive.manifest.files)
            return existing, ExtractStats(n, 0, n, time.monotonic() - start)

        worktree = Path(worktree)
        current_files = discover_files(language, worktree)
        current_hashes = {
            rel: content_hash((worktree / rel).read_bytes()) for rel in current_files
        }
        baseline_entries = {f.path: f for f in baseline_archive.manifest.files}

        to_extract = [
            rel
            for rel in current_files
            if rel not in baseline_entries
            or baseline_entries[rel].content_hash != current_hashes[rel]
        ]
        unchanged = [rel for rel in current_files if rel not in set(to_extract)]

        fresh = [extract_file(language, worktree, rel) for rel in sorted(to_extract)]
        failures = sum(1 for f in fresh if f.parse_error is not None)

        # Only the re-extracted files need validating; carried rows come out
        # of the validated baseline unchanged, and all references are
        # file-local (the property the carry-over itself relies on).
        relations = merge_file_facts(language, fresh)
        validate_referential_integrity(language, relations)
        carried_rows = _carry_over(language, baseline_archive, unchanged)
        for name, rows in carried_rows.items():
            relations[name].update_unchecked(rows)

        entries = [
            FileEntry(f.relative_path, f.content_hash, f.line_count) for f in fresh
        ] + [baseline_entries[rel] for rel in unchanged]

        archive = FactsArchive.build(language, repo_id, commit_id, entries, relations)
        dest = store.snapshot_dir(repo_id, language, commit_id)
        dest.parent.mkdir(parents=True, exist_ok=True)
        write_archive(archive, dest)
        _write_snapshot_meta(dest, baseline.commit_id)

    snap = store.get(repo_id, commit_id, language)
    snap._archive = archive
    stats = ExtractStats(
        total_files=len(current_files),
        extracted=len(fresh),
        carried=len(unchanged),
        wall_seconds=time.monotonic() - start,
        parse_failures=failures,
    )
    return snap, stats


def _file_id_by_path(language: str, relations: dict[str, Relation]) -> dict[str, int]:
    if language == "python":
        return {row[1]: row[0] for row in relations["file"]}
    return {row[2]: row[0] for row in relations["xml_file"]}


def _carry_over(
    language: str, baseline: FactsArchive, unchanged_paths: list[str]
) -> dict[str, set[tuple]]:
    by_file = partition_rows_by_file(language, baseline.relations)
    path_to_id = _file_id_by_path(language, baseline.relations)
    out: dict[str, set[tuple]] = {}
    for rel_path in unchanged_paths:
        file_id = path_to_id.get(rel_path)
        if file_id is None:
            raise FactsError(f"baseline archive has no file row for {rel_path!r}")
        for name, rows in by_file.get(file_id, {}).items():
            out.setdefault(name, set()).update(rows)
    return out


def restrict_to_changed(
    snapshot: Snapshot | FactsArchive, changed_files: set[str]
) -> FactsArchive:
    """Archive restricted to the changed files' rows, plus changed_file."""
    archive = snapshot.archive if isinstance(snapshot, Snapshot) else snapshot
    language = archive.manifest.subject_language
    known = {f.path for f in archive.manifest.files}
    unknown = sorted(set(changed_files) - known)
    if unknown:
        raise FactsError(f"changed files not in snapshot: {', '.join(unknown)}")

    path_to_id = _file_id_by_path(language, archive.relations)
    keep_ids = {path_to_id[p] for p in changed_files if p in path_to_id}
    by_file = partition_rows_by_file(language, archive.relations)

    relations = {
        name: Relation(schema) for name, schema in tier1_schemas(language).items()
    }
    for file_id in keep_ids:
        for name, rows in by_file.get(file_id, {}).items():
            relations[name].update_unchecked(rows)
    changed_rel = Relation(CHANGED_FILE_SCHEMA)
    for file_id in keep_ids:
        changed_rel.add((file_id,))
    relations["changed_file"] = changed_rel

    entries = [f for f in archive.manifest.files if f.path in changed_files]
    return FactsArchive.build(
        language,
        archive.manifest.repo_id,
        archive.manifest.commit_id,
        entries,
        relations,
    )
