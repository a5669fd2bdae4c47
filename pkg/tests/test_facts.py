import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codelog.facts import (
    FactsArchive,
    FactsError,
    FileEntry,
    Manifest,
    Relation,
    RelationSchema,
    canonical_order,
    diff_manifests,
    escape_str,
    read_archive,
    render_relation,
    unescape_str,
    write_archive,
)

CLASS_SCHEMA = RelationSchema("class", (("id", "int"), ("name", "str")))


def archive_with(rows, files=(), language="python", commit="c1"):
    rel = Relation(CLASS_SCHEMA, set(rows))
    return FactsArchive.build(language, "repo", commit, list(files), {"class": rel})


def test_empty_archive_roundtrip(tmp_path):
    archive = FactsArchive.build("python", "repo", "c1", [], {})
    dest = tmp_path / "arch"
    write_archive(archive, dest)
    doc = json.loads((dest / "manifest.json").read_text())
    assert doc["files"] == [] and doc["relations"] == []
    assert list((dest / "relations").glob("*.facts")) == []
    assert read_archive(dest) == archive


def test_write_twice_byte_identical(tmp_path):
    archive = archive_with({(1, "A"), (2, "B")})
    write_archive(archive, tmp_path / "a")
    write_archive(archive, tmp_path / "b")
    for name in ("manifest.json", "relations/class.facts"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_roundtrip_identity(tmp_path):
    archive = archive_with(
        {(1, "plain"), (2, "tab\there"), (3, "line\nbreak"), (4, "back\\slash"), (-5, "")},
        files=[FileEntry("a.py", "00" * 32, 10)],
    )
    write_archive(archive, tmp_path / "arch")
    assert read_archive(tmp_path / "arch") == archive


def test_manifest_row_counts_match_wc(tmp_path, py_extraction):
    archive = FactsArchive.build(
        "python", "repo", "c1", py_extraction.file_entries, py_extraction.relations
    )
    dest = tmp_path / "arch"
    write_archive(archive, dest)
    doc = json.loads((dest / "manifest.json").read_text())
    for entry in doc["relations"]:
        data = (dest / "relations" / f"{entry['name']}.facts").read_bytes()
        assert entry["row_count"] == data.count(b"\n")


def test_row_count_mismatch_named(tmp_path):
    archive = archive_with({(1, "A"), (2, "B"), (3, "C"), (4, "D")})
    dest = tmp_path / "arch"
    write_archive(archive, dest)
    manifest = json.loads((dest / "manifest.json").read_text())
    manifest["relations"][0]["row_count"] = 5
    (dest / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(FactsError, match="class.*5 rows.*4"):
        read_archive(dest)


def test_arity_mismatch_names_line(tmp_path):
    archive = archive_with({(1, "A"), (2, "B")})
    dest = tmp_path / "arch"
    write_archive(archive, dest)
    facts = dest / "relations" / "class.facts"
    facts.write_text("1\tA\n2\n")
    with pytest.raises(FactsError, match="class, line 2"):
        read_archive(dest)


def test_malformed_escape_rejected(tmp_path):
    archive = archive_with({(1, "A")})
    dest = tmp_path / "arch"
    write_archive(archive, dest)
    (dest / "relations" / "class.facts").write_text("1\tbad\\x\n")
    with pytest.raises(FactsError, match="malformed escape"):
        read_archive(dest)


def test_missing_manifest(tmp_path):
    with pytest.raises(FactsError, match="manifest.json"):
        read_archive(tmp_path)


def test_duplicate_tuple_rejected_on_write():
    rel = Relation(CLASS_SCHEMA)
    rel.add((1, "A"))
    rel.add((1, "A"))  # set semantics: same tuple twice is one row
    assert len(rel) == 1
    with pytest.raises(FactsError, match="arity"):
        rel.add((1, "A", "extra"))


def test_type_mismatch_rejected():
    rel = Relation(CLASS_SCHEMA)
    with pytest.raises(FactsError, match="expects int"):
        rel.add(("1", "A"))
    with pytest.raises(FactsError, match="expects str"):
        rel.add((1, 2))


def test_nothing_written_on_invalid(tmp_path):
    archive = archive_with({(1, "A")})
    archive.manifest.relations[0] = archive.manifest.relations[0].__class__(
        "class", 2, ("id", "name"), ("int", "str"), 99
    )
    dest = tmp_path / "arch"
    with pytest.raises(FactsError):
        write_archive(archive, dest)
    assert not dest.exists()


# -- diff_manifests


def _manifest(files, language="python"):
    return Manifest(1, language, "repo", "c", files=[FileEntry(*f) for f in files])


def test_diff_identical():
    m = _manifest([("a.py", "h1", 1), ("b.py", "h2", 2)])
    delta = diff_manifests(m, m)
    assert delta.unchanged == {"a.py", "b.py"}
    assert not delta.added and not delta.removed and not delta.changed


def test_diff_basic_partition():
    base = _manifest([("a.py", "h1", 1), ("b.py", "h2", 2)])
    cur = _manifest([("b.py", "h2x", 2), ("c.py", "h3", 3)])
    delta = diff_manifests(base, cur)
    assert delta.removed == {"a.py"}
    assert delta.changed == {"b.py"}
    assert delta.added == {"c.py"}
    assert delta.unchanged == set()


def test_diff_500_files_one_flipped():
    files = [(f"f{i:03}.py", f"h{i}", i) for i in range(500)]
    base = _manifest(files)
    flipped = list(files)
    flipped[123] = ("f123.py", "DIFFERENT", 123)
    delta = diff_manifests(base, _manifest(flipped))
    assert len(delta.changed) == 1 and delta.changed == {"f123.py"}
    assert len(delta.unchanged) == 499


def test_diff_language_mismatch():
    with pytest.raises(FactsError, match="languages"):
        diff_manifests(_manifest([]), _manifest([], language="xml"))


def test_diff_antisymmetry():
    a = _manifest([("a.py", "h1", 1), ("b.py", "h2", 2)])
    b = _manifest([("b.py", "h2", 2), ("c.py", "h3", 3)])
    assert diff_manifests(a, b).added == diff_manifests(b, a).removed


# -- canonical order


def test_canonical_order_trivial():
    assert canonical_order(Relation(CLASS_SCHEMA)) == []
    rel = Relation(CLASS_SCHEMA, {(2, "b"), (1, "a")})
    assert canonical_order(rel) == [(1, "a"), (2, "b")]


def test_canonical_order_insertion_independent():
    rng = random.Random(7)
    rows = {(rng.randrange(-1000, 1000), f"s{rng.randrange(1000)}") for _ in range(1000)}
    shuffled = list(rows)
    rng.shuffle(shuffled)
    rel_a = Relation(CLASS_SCHEMA, set(shuffled))
    rng.shuffle(shuffled)
    rel_b = Relation(CLASS_SCHEMA, set(shuffled))
    assert canonical_order(rel_a) == canonical_order(rel_b)
    assert render_relation(rel_a) == render_relation(rel_b)


FIELD_TEXT = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",)), max_size=20
)


@settings(max_examples=60, deadline=None)
@given(
    rows=st.sets(st.tuples(st.integers(-(2**40), 2**40), FIELD_TEXT), max_size=25)
)
def test_roundtrip_property(tmp_path_factory, rows):
    archive = archive_with(rows)
    dest = tmp_path_factory.mktemp("prop") / "arch"
    write_archive(archive, dest)
    assert read_archive(dest) == archive


@settings(max_examples=80, deadline=None)
@given(text=FIELD_TEXT)
def test_escape_roundtrip(text):
    escaped = escape_str(text)
    assert "\t" not in escaped and "\n" not in escaped
    assert unescape_str(escaped) == text
