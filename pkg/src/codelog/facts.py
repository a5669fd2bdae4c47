"""Relations, manifests, and the on-disk facts archive.

An archive is a directory with a ``manifest.json`` plus one TSV-like
``relations/<name>.facts`` file per relation. Serialization is canonical:
the same logical content always produces the same bytes, which is what the
incremental extractor's equivalence guarantees are built on.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path

FORMAT_VERSION = 1

SUBJECT_LANGUAGES = ("python", "xml")

# Column types. Values are plain Python ints (64-bit signed range) and strs.
INT = "int"
STR = "str"


class FactsError(Exception):
    """Raised for malformed archives, schema violations, and bad tuples."""


def content_hash(data: bytes) -> str:
    """256-bit hex digest of raw file bytes."""
    return hashlib.sha256(data).hexdigest()


def escape_str(value: str) -> str:
    return value.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def unescape_str(text: str, context: str = "") -> str:
    out: list[str] = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\\":
            if i + 1 >= n:
                raise FactsError(f"malformed escape at end of field{context}")
            nxt = text[i + 1]
            if nxt == "t":
                out.append("\t")
            elif nxt == "n":
                out.append("\n")
            elif nxt == "\\":
                out.append("\\")
            else:
                raise FactsError(f"malformed escape '\\{nxt}'{context}")
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


@dataclass(frozen=True)
class RelationSchema:
    """Shape of one relation: ordered, typed columns plus a key prefix."""

    name: str
    columns: tuple[tuple[str, str], ...]  # (column name, "int" | "str")
    key_arity: int = 1

    def __post_init__(self):
        names = [c for c, _ in self.columns]
        if len(set(names)) != len(names):
            raise FactsError(f"relation {self.name}: duplicate column names")
        for _, typ in self.columns:
            if typ not in (INT, STR):
                raise FactsError(f"relation {self.name}: unknown column type {typ!r}")
        if not 0 <= self.key_arity <= len(self.columns):
            raise FactsError(f"relation {self.name}: key_arity out of range")

    @property
    def arity(self) -> int:
        return len(self.columns)

    @property
    def column_names(self) -> list[str]:
        return [c for c, _ in self.columns]

    @property
    def column_types(self) -> list[str]:
        return [t for _, t in self.columns]


class Relation:
    """A set of fixed-arity tuples conforming to a schema."""

    def __init__(self, schema: RelationSchema, tuples: set[tuple] | None = None):
        self.schema = schema
        self.tuples: set[tuple] = set()
        if tuples:
            for row in tuples:
                self.add(row)

    def add(self, row: tuple) -> None:
        if len(row) != self.schema.arity:
            raise FactsError(
                f"relation {self.schema.name}: tuple arity {len(row)} != {self.schema.arity}"
            )
        for value, (col, typ) in zip(row, self.schema.columns):
            if typ == INT:
                if not isinstance(value, int) or isinstance(value, bool):
                    raise FactsError(
                        f"relation {self.schema.name}: column {col} expects int, got {value!r}"
                    )
            else:
                if not isinstance(value, str):
                    raise FactsError(
                        f"relation {self.schema.name}: column {col} expects str, got {value!r}"
                    )
        self.tuples.add(row)

    def update_unchecked(self, rows) -> None:
        """Bulk add of rows carried over from an already-validated relation."""
        self.tuples.update(rows)

    def __len__(self) -> int:
        return len(self.tuples)

    def __iter__(self):
        return iter(self.tuples)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Relation)
            and self.schema == other.schema
            and self.tuples == other.tuples
        )

    def __repr__(self) -> str:
        return f"Relation({self.schema.name}/{self.schema.arity}, {len(self.tuples)} rows)"


def canonical_order(relation: Relation) -> list[tuple]:
    """Total lexicographic order over the relation's tuples.

    Columns are homogeneously typed, so plain tuple comparison is well
    defined; str comparison by code point coincides with UTF-8 byte order.
    """
    return sorted(relation.tuples)


@dataclass(frozen=True)
class FileEntry:
    path: str
    content_hash: str
    line_count: int


@dataclass(frozen=True)
class RelationEntry:
    name: str
    arity: int
    columns: tuple[str, ...]
    column_types: tuple[str, ...]
    row_count: int


@dataclass
class Manifest:
    format_version: int
    subject_language: str
    repo_id: str
    commit_id: str
    files: list[FileEntry] = field(default_factory=list)
    relations: list[RelationEntry] = field(default_factory=list)

    def validate(self) -> None:
        if self.subject_language not in SUBJECT_LANGUAGES:
            raise FactsError(f"unknown subject_language {self.subject_language!r}")
        paths = [f.path for f in self.files]
        if len(set(paths)) != len(paths):
            raise FactsError("manifest: duplicate file paths")
        if paths != sorted(paths):
            raise FactsError("manifest: file paths not sorted")

    def to_json_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "subject_language": self.subject_language,
            "repo_id": self.repo_id,
            "commit_id": self.commit_id,
            "files": [
                {"path": f.path, "content_hash": f.content_hash, "line_count": f.line_count}
                for f in self.files
            ],
            "relations": [
                {
                    "name": r.name,
                    "arity": r.arity,
                    "columns": list(r.columns),
                    "column_types": list(r.column_types),
                    "row_count": r.row_count,
                }
                for r in self.relations
            ],
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "Manifest":
        try:
            return Manifest(
                format_version=doc["format_version"],
                subject_language=doc["subject_language"],
                repo_id=doc["repo_id"],
                commit_id=doc["commit_id"],
                files=[
                    FileEntry(f["path"], f["content_hash"], f["line_count"])
                    for f in doc["files"]
                ],
                relations=[
                    RelationEntry(
                        r["name"],
                        r["arity"],
                        tuple(r["columns"]),
                        tuple(r["column_types"]),
                        r["row_count"],
                    )
                    for r in doc["relations"]
                ],
            )
        except (KeyError, TypeError) as exc:
            raise FactsError(f"manifest.json missing or malformed field: {exc}") from exc


@dataclass
class FactsArchive:
    manifest: Manifest
    relations: dict[str, Relation]

    @staticmethod
    def build(
        subject_language: str,
        repo_id: str,
        commit_id: str,
        files: list[FileEntry],
        relations: dict[str, Relation],
    ) -> "FactsArchive":
        """Assemble an archive, deriving the manifest's relation entries."""
        manifest = Manifest(
            format_version=FORMAT_VERSION,
            subject_language=subject_language,
            repo_id=repo_id,
            commit_id=commit_id,
            files=sorted(files, key=lambda f: f.path),
            relations=[
                RelationEntry(
                    name,
                    rel.schema.arity,
                    tuple(rel.schema.column_names),
                    tuple(rel.schema.column_types),
                    len(rel),
                )
                for name, rel in sorted(relations.items())
            ],
        )
        return FactsArchive(manifest, dict(relations))

    def validate(self) -> None:
        self.manifest.validate()
        listed = {r.name for r in self.manifest.relations}
        present = set(self.relations)
        if listed != present:
            missing = listed - present
            extra = present - listed
            raise FactsError(
                f"manifest/relations mismatch: missing={sorted(missing)} extra={sorted(extra)}"
            )
        for entry in self.manifest.relations:
            rel = self.relations[entry.name]
            if entry.row_count != len(rel):
                raise FactsError(
                    f"relation {entry.name}: manifest row_count {entry.row_count} != {len(rel)}"
                )
            if entry.arity != rel.schema.arity:
                raise FactsError(f"relation {entry.name}: manifest arity mismatch")
            if tuple(entry.columns) != tuple(rel.schema.column_names):
                raise FactsError(f"relation {entry.name}: manifest column names mismatch")
            if tuple(entry.column_types) != tuple(rel.schema.column_types):
                raise FactsError(f"relation {entry.name}: manifest column types mismatch")

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, FactsArchive)
            and self.manifest == other.manifest
            and self.relations == other.relations
        )


@dataclass
class FileDelta:
    added: set[str]
    removed: set[str]
    changed: set[str]
    unchanged: set[str]


def diff_manifests(baseline: Manifest, current: Manifest) -> FileDelta:
    """Partition the current manifest's files against a baseline by hash."""
    if baseline.subject_language != current.subject_language:
        raise FactsError(
            "cannot diff manifests across languages: "
            f"{baseline.subject_language} vs {current.subject_language}"
        )
    base = {f.path: f.content_hash for f in baseline.files}
    cur = {f.path: f.content_hash for f in current.files}
    added = {p for p in cur if p not in base}
    removed = {p for p in base if p not in cur}
    changed = {p for p in cur if p in base and cur[p] != base[p]}
    unchanged = {p for p in cur if p in base and cur[p] == base[p]}
    return FileDelta(added=added, removed=removed, changed=changed, unchanged=unchanged)


def _render_value(value, typ: str) -> str:
    if typ == INT:
        return str(value)
    return escape_str(value)


def _parse_value(text: str, typ: str, context: str):
    if typ == INT:
        try:
            parsed = int(text, 10)
        except ValueError:
            raise FactsError(f"invalid int literal {text!r}{context}") from None
        if str(parsed) != text:
            raise FactsError(f"non-canonical int literal {text!r}{context}")
        return parsed
    return unescape_str(text, context)


def render_relation(relation: Relation) -> bytes:
    """Canonical .facts bytes: sorted rows, TAB columns, trailing newline."""
    types = relation.schema.column_types
    lines = []
    for row in canonical_order(relation):
        lines.append("\t".join(_render_value(v, t) for v, t in zip(row, types)))
    if not lines:
        return b""
    return ("\n".join(lines) + "\n").encode("utf-8")


def render_manifest(manifest: Manifest) -> bytes:
    return (json.dumps(manifest.to_json_dict(), indent=2, ensure_ascii=False) + "\n").encode(
        "utf-8"
    )


def write_archive(archive: FactsArchive, destination: str | Path) -> None:
    """Write the archive under ``destination``, canonically and atomically.

    Validates every invariant first; on failure nothing is written. The
    directory is built in a sibling temp dir and renamed into place.
    """
    archive.validate()
    destination = Path(destination)
    if destination.exists() and any(destination.iterdir()):
        raise FactsError(f"destination {destination} exists and is not empty")
    staging = destination.parent / (destination.name + f".partial.{os.getpid()}")
    if staging.exists():
        shutil.rmtree(staging)
    try:
        rel_dir = staging / "relations"
        rel_dir.mkdir(parents=True)
        (staging / "manifest.json").write_bytes(render_manifest(archive.manifest))
        for name, relation in archive.relations.items():
            (rel_dir / f"{name}.facts").write_bytes(render_relation(relation))
        if destination.exists():
            destination.rmdir()
        os.rename(staging, destination)
    except Exception:
        if staging.exists():
            shutil.rmtree(staging, ignore_errors=True)
        raise


def read_archive(source: str | Path) -> FactsArchive:
    """Read and fully validate an archive directory."""
    source = Path(source)
    manifest_path = source / "manifest.json"
    if not manifest_path.is_file():
        raise FactsError(f"missing manifest.json in {source}")
    try:
        doc = json.loads(manifest_path.read_bytes().decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise FactsError(f"manifest.json is not valid JSON: {exc}") from exc
    manifest = Manifest.from_json_dict(doc)
    manifest.validate()

    relations: dict[str, Relation] = {}
    for entry in manifest.relations:
        schema = RelationSchema(
            entry.name,
            tuple(zip(entry.columns, entry.column_types)),
            key_arity=1 if entry.arity else 0,
        )
        path = source / "relations" / f"{entry.name}.facts"
        if not path.is_file():
            raise FactsError(f"relation {entry.name}: missing facts file")
        rel = Relation(schema)
        # bytes + explicit decode: text mode would fold \r into \n
        text = path.read_bytes().decode("utf-8")
        if text:
            if not text.endswith("\n"):
                raise FactsError(f"relation {entry.name}: missing trailing newline")
            lines = text[:-1].split("\n")
        else:
            lines = []
        for lineno, line in enumerate(lines, start=1):
            context = f" (relation {entry.name}, line {lineno})"
            fields = line.split("\t")
            if len(fields) != entry.arity:
                raise FactsError(
                    f"relation {entry.name}, line {lineno}: "
                    f"expected {entry.arity} columns, found {len(fields)}"
                )
            row = tuple(
                _parse_value(f, t, context) for f, t in zip(fields, entry.column_types)
            )
            if row in rel.tuples:
                raise FactsError(f"relation {entry.name}, line {lineno}: duplicate tuple")
            rel.add(row)
        if len(rel) != entry.row_count:
            raise FactsError(
                f"relation {entry.name}: manifest claims {entry.row_count} rows, "
                f"file has {len(rel)}"
            )
        relations[entry.name] = rel

    archive = FactsArchive(manifest, relations)
    archive.validate()
    return archive


