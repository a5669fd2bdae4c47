import shutil
from pathlib import Path

import pytest

from codelog.cli import main
from tests.conftest import PYREPO, POMREPO, query_path


@pytest.fixture
def env(tmp_path, capsys):
    """A store with extracted python and xml snapshots."""
    repo = tmp_path / "pyrepo"
    shutil.copytree(PYREPO, repo)
    pom = tmp_path / "pomrepo"
    shutil.copytree(POMREPO, pom)
    store = tmp_path / "store"
    assert main([
        "extract", "--lang", "python", "--repo", str(repo),
        "--commit", "c1", "--store", str(store), "--repo-id", "demo",
    ]) == 0
    assert main([
        "extract", "--lang", "xml", "--repo", str(pom),
        "--commit", "p1", "--store", str(store), "--repo-id", "pom",
    ]) == 0
    capsys.readouterr()
    return {"repo": repo, "pom": pom, "store": store, "tmp": tmp_path}


def run(capsys, argv):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# -- extract


def test_extract_writes_snapshot(tmp_path, capsys):
    repo = tmp_path / "repo"
    shutil.copytree(PYREPO, repo)
    code, out, err = run(capsys, [
        "extract", "--lang", "python", "--repo", str(repo),
        "--commit", "c1", "--store", str(tmp_path / "store"),
    ])
    assert code == 0
    snapshot_path = Path(out.strip())
    assert snapshot_path.is_dir()
    assert (tmp_path / "store") in snapshot_path.parents
    assert "re-extracted: 20" in err


def test_extract_unknown_lang_usage_error(tmp_path, capsys):
    code, _, err = run(capsys, [
        "extract", "--lang", "cobol", "--repo", ".", "--commit", "c",
        "--store", str(tmp_path),
    ])
    assert code == 1
    assert "usage" in err or "invalid choice" in err


def test_extract_with_baseline_counts(env, capsys):
    (env["repo"] / "stats.py").write_text("def mean(values):\n    return 0\n")
    code, out, err = run(capsys, [
        "extract", "--lang", "python", "--repo", str(env["repo"]),
        "--commit", "c2", "--store", str(env["store"]),
        "--repo-id", "demo", "--baseline", "c1",
    ])
    assert code == 0
    assert "re-extracted: 1, carried: 19" in err


def test_extract_busy_lease(env, capsys):
    from codelog.incremental import SnapshotStore

    store = SnapshotStore(env["store"])
    lease = store.acquire_lease("demo", "c9", "python")
    code, _, err = run(capsys, [
        "extract", "--lang", "python", "--repo", str(env["repo"]),
        "--commit", "c9", "--store", str(env["store"]), "--repo-id", "demo",
    ])
    lease.release()
    assert code == 5
    assert "busy" in err


def test_extract_single_file_scan(tmp_path, capsys):
    repo = tmp_path / "repo"
    shutil.copytree(PYREPO, repo)
    code, out, err = run(capsys, [
        "extract", "--lang", "python", "--repo", str(repo / "calc.py"),
        "--commit", "c1", "--store", str(tmp_path / "store"),
    ])
    assert code == 0
    code, out, err = run(capsys, [
        "query", "--db", out.strip(), "--script",
        str(query_path("python/cyclomatic_complexity.gdl")),
    ])
    assert code == 0
    assert "classify" in out  # only calc.py functions present
    assert "mean" not in out


# -- query


def test_query_pom_exact_tsv(env, capsys):
    code, out, err = run(capsys, [
        "query", "--store", str(env["store"]), "--repo", "pom", "--commit", "p1",
        "--script", str(query_path("xml/pom_dependency.gdl")),
    ])
    assert code == 0
    assert out == "pom.xml\tg\t1\ta\n"


def test_query_cache_hit_second_run(env, capsys):
    argv = [
        "query", "--store", str(env["store"]), "--repo", "demo", "--commit", "c1",
        "--script", str(query_path("python/class_hierarchy.gdl")),
    ]
    code1, out1, err1 = run(capsys, argv)
    code2, out2, err2 = run(capsys, argv)
    assert code1 == code2 == 0
    assert out1 == out2
    assert "cache: hit" not in err1
    assert "cache: hit" in err2


def test_query_no_cache_flag(env, capsys):
    argv = [
        "query", "--store", str(env["store"]), "--repo", "demo", "--commit", "c1",
        "--script", str(query_path("python/comment_ratio.gdl")), "--no-cache",
    ]
    _, out1, _ = run(capsys, argv)
    _, out2, err2 = run(capsys, argv)
    assert out1 == out2
    assert "cache: hit" not in err2


def test_query_type_error_exit_2(env, tmp_path, capsys):
    bad = tmp_path / "bad.gdl"
    bad.write_text(
        'use coref::python::*\n'
        'fn db() -> PythonDB { return PythonDB::load("f") }\n'
        'fn f(n: string) -> bool {\n'
        '    for (c in Class(db())) { if (n = c.getName() && n = 3) { return true } }\n'
        '}\n'
        'fn main() { output(f()) }\n'
    )
    code, out, err = run(capsys, [
        "query", "--store", str(env["store"]), "--repo", "demo", "--commit", "c1",
        "--script", str(bad),
    ])
    assert code == 2
    assert out == ""
    assert ":4:" in err  # line:column diagnostics


def test_query_syntax_error_exit_2(env, tmp_path, capsys):
    bad = tmp_path / "bad.gdl"
    bad.write_text("fn f( -> bool { return true }")
    code, _, err = run(capsys, [
        "query", "--store", str(env["store"]), "--repo", "demo", "--commit", "c1",
        "--script", str(bad),
    ])
    assert code == 2
    assert "1:7" in err


def test_query_evaluation_error_exit_3(env, tmp_path, capsys):
    bad = tmp_path / "divzero.gdl"
    bad.write_text(
        'use coref::python::*\n'
        'fn db() -> PythonDB { return PythonDB::load("f") }\n'
        'fn f(p: string, r: int) -> bool {\n'
        '    for (x in File(db())) {\n'
        '        let (lines = x.getLineCount()) {\n'
        '            if (p = x.getRelativePath() && r = lines / 0) { return true }\n'
        '        }\n'
        '    }\n'
        '}\n'
        'fn main() { output(f()) }\n'
    )
    code, out, err = run(capsys, [
        "query", "--store", str(env["store"]), "--repo", "demo", "--commit", "c1",
        "--script", str(bad),
    ])
    assert code == 3
    assert "division by zero" in err


def test_query_json_format(env, capsys):
    import json

    code, out, _ = run(capsys, [
        "query", "--store", str(env["store"]), "--repo", "pom", "--commit", "p1",
        "--script", str(query_path("xml/pom_dependency.gdl")), "--format", "json",
    ])
    assert code == 0
    doc = json.loads(out)
    assert doc == [{"fileName": "pom.xml", "m1": "g", "m2": "1", "m3": "a"}]


def test_query_missing_snapshot(env, capsys):
    code, _, err = run(capsys, [
        "query", "--store", str(env["store"]), "--repo", "demo", "--commit", "ghost",
        "--script", str(query_path("python/comment_ratio.gdl")),
    ])
    assert code == 2
    assert "no snapshot" in err


def test_stdout_purity(env, capsys):
    code, out, err = run(capsys, [
        "query", "--store", str(env["store"]), "--repo", "demo", "--commit", "c1",
        "--script", str(query_path("python/call_graph.gdl")),
    ])
    assert code == 0
    for line in out.splitlines():
        assert "\t" in line  # only result rows on stdout
    assert "wall time" in err  # timings on stderr


# -- delta


def test_delta_single_file(env, tmp_path, capsys):
    changed = tmp_path / "changed.txt"
    changed.write_text("calc.py\n")
    code, out, _ = run(capsys, [
        "delta", "--store", str(env["store"]), "--repo", "demo", "--commit", "c1",
        "--changed", str(changed),
        "--script", str(query_path("python/changed_functions.gdl")),
    ])
    assert code == 0
    lines = out.splitlines()
    assert lines and all(line.startswith("calc.py\t") for line in lines)
    assert any("Calc.classify/2" in line for line in lines)


def test_delta_empty_list(env, tmp_path, capsys):
    changed = tmp_path / "none.txt"
    changed.write_text("")
    code, out, _ = run(capsys, [
        "delta", "--store", str(env["store"]), "--repo", "demo", "--commit", "c1",
        "--changed", str(changed),
        "--script", str(query_path("python/changed_functions.gdl")),
    ])
    assert code == 0
    assert out == ""


def test_delta_unknown_file(env, tmp_path, capsys):
    changed = tmp_path / "changed.txt"
    changed.write_text("ghost.py\n")
    code, _, err = run(capsys, [
        "delta", "--store", str(env["store"]), "--repo", "demo", "--commit", "c1",
        "--changed", str(changed),
        "--script", str(query_path("python/changed_functions.gdl")),
    ])
    assert code == 2
    assert "ghost.py" in err


# -- plan


def test_plan_counts_decrease_for_library_query(capsys):
    code, out, _ = run(capsys, [
        "plan", "--script", str(query_path("python/unused_method_variant.gdl")),
        "--lang", "python",
    ])
    assert code == 0
    line = [l for l in out.splitlines() if l.startswith("nodes:")][0]
    before, after = line.removeprefix("nodes: ").split(" -> ")
    assert int(after) < int(before)


def test_plan_flat_projection_single_stage(tmp_path, capsys):
    script = tmp_path / "flat.gdl"
    script.write_text(
        'use coref::python::*\n'
        'fn db() -> PythonDB { return PythonDB::load("f") }\n'
        'fn paths(p: string) -> bool {\n'
        '    for (f in File(db())) { if (p = f.getRelativePath()) { return true } }\n'
        '}\n'
        'fn main() { output(paths()) }\n'
    )
    code, out, _ = run(capsys, ["plan", "--script", str(script), "--lang", "python"])
    assert code == 0
    assert out.count("stage ") == 1
    assert "FixpointLoop" not in out


def test_plan_script_without_main(tmp_path, capsys):
    script = tmp_path / "nomain.gdl"
    script.write_text("use coref::python::*\nfn f(x: int) -> bool { }\n")
    code, _, err = run(capsys, ["plan", "--script", str(script), "--lang", "python"])
    assert code == 2


# -- report


def test_report_counts(env, capsys):
    run(capsys, [
        "query", "--store", str(env["store"]), "--repo", "demo", "--commit", "c1",
        "--script", str(query_path("python/comment_ratio.gdl")),
    ])
    code, out, _ = run(capsys, ["report", "--metrics", str(env["store"] / "metrics.jsonl")])
    assert code == 0
    header, first, avg = out.splitlines()[:3]
    assert header == "day\tqueries\textractions\tratio"
    day, queries, extractions, ratio = first.split("\t")
    assert int(extractions) == 2  # python and xml snapshots
    assert int(queries) >= 1


def test_report_malformed_log(tmp_path, capsys):
    log = tmp_path / "m.jsonl"
    log.write_text("{}\nbroken\n")
    code, _, err = run(capsys, ["report", "--metrics", str(log)])
    assert code == 2


def test_version_flag(capsys):
    assert main(["--version"]) == 0
    assert "codelog" in capsys.readouterr().out


def test_usage_error_exit_1(capsys):
    assert main(["query"]) == 1  # missing --script


def test_store_env_var_override(env, capsys, monkeypatch):
    monkeypatch.setenv("CODELOG_STORE", str(env["store"]))
    code, out, _ = run(capsys, [
        "query", "--repo", "pom", "--commit", "p1",
        "--script", str(query_path("xml/pom_dependency.gdl")),
    ])
    assert code == 0
    assert out == "pom.xml\tg\t1\ta\n"


def test_cached_vs_uncached_stdout_identical(env, capsys):
    argv = [
        "query", "--store", str(env["store"]), "--repo", "demo", "--commit", "c1",
        "--script", str(query_path("python/fan_in.gdl")),
    ]
    _, warm, _ = run(capsys, argv)          # populates the cache
    _, cached, _ = run(capsys, argv)        # served from it
    _, uncached, _ = run(capsys, argv + ["--no-cache"])
    assert warm == cached == uncached
