"""Tier-1 relation inventories for the two subject languages.

These are the stored fact relations (the extensional database). Each
relation's first column is the node id. The ownership table drives
per-file attribution of rows, which the incremental extractor and delta
restriction rely on.
"""

from __future__ import annotations

from .facts import INT, STR, FactsError, Relation, RelationSchema


def _schema(name: str, *cols: tuple[str, str]) -> RelationSchema:
    return RelationSchema(name, tuple(cols), key_arity=1)


PYTHON_RELATIONS: dict[str, RelationSchema] = {
    s.name: s
    for s in [
        _schema(
            "file",
            ("id", INT), ("relative_path", STR), ("content_hash", STR),
            ("line_count", INT), ("code_line_count", INT), ("comment_line_count", INT),
        ),
        _schema(
            "location",
            ("id", INT), ("file_id", INT), ("start_line", INT), ("start_col", INT),
            ("end_line", INT), ("end_col", INT),
        ),
        _schema(
            "class",
            ("id", INT), ("name", STR), ("file_id", INT), ("location_id", INT),
        ),
        _schema(
            "class_base",
            ("class_id", INT), ("base_index", INT), ("base_name", STR),
        ),
        _schema(
            "function",
            ("id", INT), ("name", STR), ("kind", STR), ("parent_id", INT),
            ("file_id", INT), ("location_id", INT),
        ),
        _schema(
            "parameter",
            ("id", INT), ("function_id", INT), ("index", INT), ("name", STR),
        ),
        _schema(
            "statement",
            ("id", INT), ("kind", STR), ("parent_id", INT), ("index", INT),
            ("location_id", INT),
        ),
        _schema(
            "call",
            ("id", INT), ("enclosing_function_id", INT), ("callee_text", STR),
            ("location_id", INT),
        ),
        _schema(
            "import",
            ("id", INT), ("file_id", INT), ("imported_name", STR), ("alias", STR),
        ),
        _schema(
            "comment",
            ("id", INT), ("file_id", INT), ("location_id", INT), ("text", STR),
        ),
        _schema(
            "decorator",
            ("id", INT), ("target_id", INT), ("text", STR),
        ),
        _schema(
            "diagnostic",
            ("id", INT), ("file_id", INT), ("kind", STR), ("message", STR),
        ),
    ]
}

XML_RELATIONS: dict[str, RelationSchema] = {
    s.name: s
    for s in [
        _schema(
            "xml_file",
            ("id", INT), ("file_name", STR), ("relative_path", STR), ("content_hash", STR),
        ),
        _schema(
            "xml_location",
            ("id", INT), ("file_id", INT), ("start_line", INT), ("start_col", INT),
            ("end_line", INT), ("end_col", INT),
        ),
        _schema(
            "xml_element",
            ("id", INT), ("name", STR), ("location_id", INT), ("parent_id", INT),
            ("index_order", INT),
        ),
        _schema(
            "xml_attribute",
            ("id", INT), ("element_id", INT), ("name", STR), ("value", STR),
        ),
        _schema(
            "xml_character",
            ("id", INT), ("text", STR), ("belonged_element_id", INT), ("index", INT),
        ),
        _schema(
            "diagnostic",
            ("id", INT), ("file_id", INT), ("kind", STR), ("message", STR),
        ),
    ]
}

# The delta-restricted archive adds this relation for library use.
CHANGED_FILE_SCHEMA = _schema("changed_file", ("file_id", INT))

# File extensions per subject language.
SOURCE_SUFFIXES = {"python": (".py",), "xml": (".xml",)}

# Row ownership: how to find the file owning a row.
#   ("self",)        -> the row is the file row; owner is its own id
#   ("file_col", i)  -> column i holds the owning file id
#   ("id_ref", i)    -> column i references a node whose owner is already known
# Relations are resolved in the listed order, so references only point at
# earlier entries.
OWNERSHIP: dict[str, list[tuple[str, tuple]]] = {
    "python": [
        ("file", ("self",)),
        ("location", ("file_col", 1)),
        ("class", ("file_col", 2)),
        ("function", ("file_col", 4)),
        ("import", ("file_col", 1)),
        ("comment", ("file_col", 1)),
        ("diagnostic", ("file_col", 1)),
        ("statement", ("id_ref", 4)),
        ("call", ("id_ref", 3)),
        ("parameter", ("id_ref", 1)),
        ("class_base", ("id_ref", 0)),
        ("decorator", ("id_ref", 1)),
    ],
    "xml": [
        ("xml_file", ("self",)),
        ("xml_location", ("file_col", 1)),
        ("diagnostic", ("file_col", 1)),
        ("xml_element", ("id_ref", 2)),
        ("xml_attribute", ("id_ref", 1)),
        ("xml_character", ("id_ref", 2)),
    ],
}


def tier1_schemas(language: str) -> dict[str, RelationSchema]:
    if language == "python":
        return dict(PYTHON_RELATIONS)
    if language == "xml":
        return dict(XML_RELATIONS)
    raise FactsError(f"unknown subject language {language!r}")


def empty_relations(language: str) -> dict[str, Relation]:
    return {name: Relation(schema) for name, schema in tier1_schemas(language).items()}


def partition_rows_by_file(
    language: str, relations: dict[str, Relation]
) -> dict[int, dict[str, set[tuple]]]:
    """Group every row under its owning file id.

    Raises on dangling references; this doubles as the referential
    integrity half of the archive validator.
    """
    owner_of: dict[int, int] = {}
    result: dict[int, dict[str, set[tuple]]] = {}

    def put(file_id: int, relation: str, row: tuple) -> None:
        result.setdefault(file_id, {}).setdefault(relation, set()).add(row)

    for name, strategy in OWNERSHIP[language]:
        rel = relations.get(name)
        if rel is None:
            continue
        kind = strategy[0]
        for row in rel:
            if kind == "self":
                file_id = row[0]
            elif kind == "file_col":
                file_id = row[strategy[1]]
            else:
                ref = row[strategy[1]]
                file_id = owner_of.get(ref)
                if file_id is None:
                    raise FactsError(
                        f"relation {name}: row {row!r} references unknown node {ref}"
                    )
            owner_of[row[0]] = file_id
            put(file_id, name, row)
    return result


def validate_referential_integrity(language: str, relations: dict[str, Relation]) -> None:
    """Every foreign id column must resolve within the archive."""
    partition_rows_by_file(language, relations)
    file_rel = "file" if language == "python" else "xml_file"
    files = relations.get(file_rel)
    file_ids = {row[0] for row in files} if files else set()
    for name, strategy in OWNERSHIP[language]:
        rel = relations.get(name)
        if rel is None:
            continue
        if strategy[0] == "file_col":
            col = strategy[1]
            for row in rel:
                if row[col] not in file_ids:
                    raise FactsError(
                        f"relation {name}: row {row!r} references missing file {row[col]}"
                    )
