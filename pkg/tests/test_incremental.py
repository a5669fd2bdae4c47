import shutil

import pytest

from codelog.facts import FactsError, read_archive
from codelog.incremental import (
    BusyError,
    SnapshotStore,
    full_extract,
    incremental_extract,
    restrict_to_changed,
)
from tests.conftest import PYREPO


def relations_bytes(snap_dir):
    return {
        p.name: p.read_bytes() for p in sorted((snap_dir / "relations").glob("*.facts"))
    }


@pytest.fixture
def repo(tmp_path):
    dst = tmp_path / "repo"
    shutil.copytree(PYREPO, dst)
    return dst


@pytest.fixture
def store(tmp_path):
    return SnapshotStore(tmp_path / "store")


def test_full_extract_lists_all_files(repo, store):
    snap, stats = full_extract(store, repo, "demo", "c1", "python")
    assert stats.total_files == 20
    assert stats.extracted == 20 and stats.carried == 0
    assert len(snap.archive.manifest.files) == 20


def test_same_worktree_two_commits_identical_relations(repo, store):
    snap1, _ = full_extract(store, repo, "demo", "c1", "python")
    snap2, _ = full_extract(store, repo, "demo", "c2", "python")
    assert relations_bytes(snap1.path) == relations_bytes(snap2.path)


def test_second_extract_same_key_is_idempotent(repo, store):
    full_extract(store, repo, "demo", "c1", "python")
    snap, stats = full_extract(store, repo, "demo", "c1", "python")
    assert stats.extracted == 0
    assert snap.commit_id == "c1"


def test_busy_lease_blocks_same_key(repo, store):
    lease = store.acquire_lease("demo", "c1", "python")
    with pytest.raises(BusyError):
        full_extract(store, repo, "demo", "c1", "python")
    lease.release()
    full_extract(store, repo, "demo", "c1", "python")


def test_distinct_commits_lease_in_parallel(store):
    a = store.acquire_lease("r", "c1", "python")
    b = store.acquire_lease("r", "c2", "python")
    a.release()
    b.release()


def test_stale_lease_takeover(tmp_path, repo):
    store = SnapshotStore(tmp_path / "store", lease_timeout=0.0)
    store.acquire_lease("demo", "c1", "python")  # never released
    import time

    time.sleep(0.01)
    lease = store.acquire_lease("demo", "c1", "python")
    lease.release()


def test_zero_delta_incremental(repo, store):
    snap1, _ = full_extract(store, repo, "demo", "c1", "python")
    snap2, stats = incremental_extract(store, snap1, repo, "c2")
    assert stats.extracted == 0
    assert stats.carried == 20
    assert relations_bytes(snap1.path) == relations_bytes(snap2.path)


def test_one_file_edit_work_proportionality(repo, store):
    snap1, _ = full_extract(store, repo, "demo", "c1", "python")
    (repo / "stats.py").write_text("def mean(values):\n    return 0\n")
    snap2, stats = incremental_extract(store, snap1, repo, "c2")
    assert stats.extracted == 1
    assert stats.carried == 19

    fresh_store = SnapshotStore(snap2.path.parent.parent.parent.parent / "fresh")
    full_snap, _ = full_extract(fresh_store, repo, "demo", "c2", "python")
    assert relations_bytes(snap2.path) == relations_bytes(full_snap.path)


def test_removed_file_rows_absent(repo, store):
    snap1, _ = full_extract(store, repo, "demo", "c1", "python")
    (repo / "tree.py").unlink()
    snap2, stats = incremental_extract(store, snap1, repo, "c2")
    paths = {f.path for f in snap2.archive.manifest.files}
    assert "tree.py" not in paths
    from codelog.tier1 import validate_referential_integrity

    validate_referential_integrity("python", snap2.archive.relations)
    fn_names = {r[1] for r in snap2.archive.relations["function"]}
    assert "depth" not in fn_names


def test_incremental_add_remove_change_mix(repo, store):
    snap, _ = full_extract(store, repo, "demo", "c1", "python")
    (repo / "new_module.py").write_text("def fresh():\n    return 1\n")
    (repo / "stats.py").write_text("def mean(values):\n    return 1\n")
    (repo / "matcher.py").unlink()
    snap2, stats = incremental_extract(store, snap, repo, "c2")
    assert stats.extracted == 2  # one added, one changed
    assert stats.carried == 18

    other = SnapshotStore(store.root.parent / "other")
    full_snap, _ = full_extract(other, repo, "demo", "c2", "python")
    assert relations_bytes(snap2.path) == relations_bytes(full_snap.path)


def test_baseline_missing_relations_falls_back(repo, store, caplog):
    snap1, _ = full_extract(store, repo, "demo", "c1", "python")
    # damage the baseline: drop a relation file and its manifest entry
    import json

    manifest_path = snap1.path / "manifest.json"
    doc = json.loads(manifest_path.read_text())
    doc["relations"] = [r for r in doc["relations"] if r["name"] != "statement"]
    manifest_path.write_text(json.dumps(doc))
    (snap1.path / "relations" / "statement.facts").unlink()
    damaged = store.get("demo", "c1", "python")

    with caplog.at_level("WARNING"):
        snap2, stats = incremental_extract(store, damaged, repo, "c2")
    assert "falling back" in caplog.text
    assert stats.extracted == 20  # full extraction happened


def test_snapshot_metadata_roundtrip(repo, store):
    snap1, _ = full_extract(store, repo, "demo", "c1", "python")
    snap2, _ = incremental_extract(store, snap1, repo, "c2")
    loaded = store.get("demo", "c2", "python")
    assert loaded.baseline_commit == "c1"
    assert loaded.created_at


def test_archive_on_disk_is_readable(repo, store):
    snap, _ = full_extract(store, repo, "demo", "c1", "python")
    archive = read_archive(snap.path)
    assert archive.manifest.repo_id == "demo"
    assert len(archive.relations["file"]) == 20


# -- delta restriction


def test_restrict_to_all_files(repo, store):
    snap, _ = full_extract(store, repo, "demo", "c1", "python")
    all_paths = {f.path for f in snap.archive.manifest.files}
    restricted = restrict_to_changed(snap, all_paths)
    for name, rel in snap.archive.relations.items():
        assert restricted.relations[name].tuples == rel.tuples
    assert len(restricted.relations["changed_file"]) == 20


def test_restrict_to_empty(repo, store):
    snap, _ = full_extract(store, repo, "demo", "c1", "python")
    restricted = restrict_to_changed(snap, set())
    assert all(len(rel) == 0 for rel in restricted.relations.values())
    assert restricted.manifest.files == []


def test_restrict_to_single_file(repo, store):
    snap, _ = full_extract(store, repo, "demo", "c1", "python")
    restricted = restrict_to_changed(snap, {"calc.py"})
    full_funcs = snap.archive.relations["function"]
    calc_file_id = next(
        r[0] for r in snap.archive.relations["file"] if r[1] == "calc.py"
    )
    expected = {r for r in full_funcs if r[4] == calc_file_id}
    assert restricted.relations["function"].tuples == expected


def test_restrict_unknown_path(repo, store):
    snap, _ = full_extract(store, repo, "demo", "c1", "python")
    with pytest.raises(FactsError, match="nope.py"):
        restrict_to_changed(snap, {"nope.py"})
