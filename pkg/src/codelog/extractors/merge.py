"""Worktree walking and per-file fact merging.

Files are extracted independently; merge order cannot affect the archive
because rows are canonically sorted at serialization time. Merging
detects node-id collisions instead of silently unioning rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from ..facts import FactsError, FileEntry, Relation
from ..tier1 import SOURCE_SUFFIXES, tier1_schemas, validate_referential_integrity
from .pyextract import FileFacts, extract_python_file
from .xmlextract import extract_xml_file

_EXTRACTORS = {"python": extract_python_file, "xml": extract_xml_file}


@dataclass
class ExtractionResult:
    relations: dict[str, Relation]
    file_entries: list[FileEntry]
    files_extracted: int
    parse_failures: int = 0
    per_file: dict[str, FileFacts] = field(default_factory=dict)


def discover_files(language: str, worktree: str | Path) -> list[str]:
    """Repo-relative source paths, sorted; hidden directories are skipped."""
    worktree = Path(worktree)
    suffixes = SOURCE_SUFFIXES[language]
    out = []
    for path in worktree.rglob("*"):
        if not path.is_file() or path.suffix not in suffixes:
            continue
        rel = path.relative_to(worktree).as_posix()
        if any(part.startswith(".") for part in rel.split("/")):
            continue
        out.append(rel)
    return sorted(out)


def extract_file(language: str, worktree: str | Path, relative_path: str) -> FileFacts:
    data = (Path(worktree) / relative_path).read_bytes()
    return _EXTRACTORS[language](relative_path, data)


def merge_file_facts(language: str, facts_list: list[FileFacts]) -> dict[str, Relation]:
    schemas = tier1_schemas(language)
    relations = {name: Relation(schema) for name, schema in schemas.items()}
    seen_ids: dict[str, dict[int, tuple]] = {name: {} for name in schemas}
    for facts in facts_list:
        for name, rows in facts.rows.items():
            rel = relations.get(name)
            if rel is None:
                raise FactsError(f"extractor produced unknown relation {name!r}")
            keyed = rel.schema.key_arity >= 1
            for row in rows:
                if keyed:
                    prior = seen_ids[name].get(row[0])
                    if prior is not None and prior != row:
                        raise FactsError(
                            f"node id collision in {name}: {row[0]} "
                            f"({facts.relative_path})"
                        )
                    seen_ids[name][row[0]] = row
                rel.add(row)
    return relations


def extract_worktree(
    language: str,
    worktree: str | Path,
    files: list[str] | None = None,
) -> ExtractionResult:
    worktree = Path(worktree)
    if files is None:
        files = discover_files(language, worktree)
    facts_list = []
    entries = []
    failures = 0
    for rel_path in sorted(files):
        facts = extract_file(language, worktree, rel_path)
        facts_list.append(facts)
        entries.append(FileEntry(rel_path, facts.content_hash, facts.line_count))
        if facts.parse_error is not None:
            failures += 1
    relations = merge_file_facts(language, facts_list)
    validate_referential_integrity(language, relations)
    return ExtractionResult(
        relations=relations,
        file_entries=entries,
        files_extracted=len(facts_list),
        parse_failures=failures,
        per_file={f.relative_path: f for f in facts_list},
    )
