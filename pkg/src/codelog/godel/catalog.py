"""Per-language type catalogs: schema bindings, built-in methods, library.

Base schemas are views over Tier-1 relations; their accessor methods are
generated here as Datalog rules so every derived fact is computed from
stored facts alone. The shipped .gdl library layers derived schemas and
the hierarchy predicates on top and is loaded with use coref::<lang>::*.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources

from ..datalog.ir import (
    Agg,
    Arith,
    Atom,
    Bind,
    Concat,
    Const,
    Neg,
    Pos,
    Predicate,
    Rule,
    Var,
)
from ..datalog.textfmt import parse_rules
from ..tier1 import CHANGED_FILE_SCHEMA, tier1_schemas
from .syntax import parse
from .types import (
    TY_BOOL,
    TY_INT,
    TY_STR,
    FnSig,
    MethodSig,
    SchemaInfo,
    Ty,
    TypeCatalog,
    typecheck,
)


class CatalogError(Exception):
    pass


_DB_TYPES = {"python": "PythonDB", "xml": "XmlDB"}

# Base schema bindings: schema -> (tier-1 relation, visible field -> column).
_BASE_SCHEMAS = {
    "python": {
        "File": ("file", {"id": 0}),
        "Location": ("location", {"id": 0}),
        "Class": ("class", {"id": 0}),
        "Callable": ("function", {"id": 0}),
        "Call": ("call", {"id": 0}),
    },
    "xml": {
        "XmlFile": ("xml_file", {"id": 0, "file_name": 1, "relative_path": 2}),
        "XmlLocation": ("xml_location", {"id": 0}),
        "XmlElement": (
            "xml_element",
            {"id": 0, "location_id": 2, "parent_id": 3, "index_order": 4},
        ),
        "XmlCharacter": (
            "xml_character",
            {"id": 0, "text": 1, "belonged_element_id": 2, "index": 3},
        ),
    },
}

# Built-in methods: schema -> [(name, return type factory, multi)].
# Their rules live in _PYTHON_RULES/_XML_RULES below plus the aggregate
# rules assembled in _aggregate_rules.
_PYTHON_METHODS = {
    "File": [
        ("getRelativePath", TY_STR, False),
        ("getLineCount", TY_INT, False),
        ("getCodeLineCount", TY_INT, False),
        ("getCommentLineCount", TY_INT, False),
    ],
    "Location": [
        ("getFile", Ty("schema", "File"), False),
        ("getRelativePath", TY_STR, False),
        ("getStartLineNumber", TY_INT, False),
        ("getEndLineNumber", TY_INT, False),
    ],
    "Class": [
        ("getName", TY_STR, False),
        ("getQualifiedName", TY_STR, False),
        ("getBase", TY_STR, True),
        ("getFile", Ty("schema", "File"), False),
        ("getLocation", Ty("schema", "Location"), False),
    ],
    "Callable": [
        ("getName", TY_STR, False),
        ("getKind", TY_STR, False),
        ("getSignature", TY_STR, False),
        ("getQualifiedName", TY_STR, False),
        ("getParameterCount", TY_INT, False),
        ("getCyclomaticComplexity", TY_INT, False),
        ("getCaller", Ty("schema", "Callable"), True),
        ("getACallSite", Ty("schema", "Call"), True),
        ("getEnclosingClass", Ty("schema", "Class"), False),
        ("getFile", Ty("schema", "File"), False),
        ("getLocation", Ty("schema", "Location"), False),
    ],
    "Call": [
        ("getCalleeText", TY_STR, False),
        ("getEnclosingFunction", Ty("schema", "Callable"), False),
        ("getLocation", Ty("schema", "Location"), False),
    ],
}

_XML_METHODS = {
    "XmlFile": [
        ("getFileName", TY_STR, False),
        ("getRelativePath", TY_STR, False),
    ],
    "XmlLocation": [
        ("getFile", Ty("schema", "XmlFile"), False),
        ("getStartLineNumber", TY_INT, False),
        ("getEndLineNumber", TY_INT, False),
    ],
    "XmlElement": [
        ("getElementName", TY_STR, False),
        ("getParent", Ty("schema", "XmlElement"), False),
        ("getLocation", Ty("schema", "XmlLocation"), False),
    ],
    "XmlCharacter": [
        ("getText", TY_STR, False),
        ("getBelongedElement", Ty("schema", "XmlElement"), False),
    ],
}

_PYTHON_RULES = """
File(f) :- file(f, p, h, lc, cc, mc).
File.getRelativePath(f, p) :- file(f, p, h, lc, cc, mc).
File.getLineCount(f, lc) :- file(f, p, h, lc, cc, mc).
File.getCodeLineCount(f, cc) :- file(f, p, h, lc, cc, mc).
File.getCommentLineCount(f, mc) :- file(f, p, h, lc, cc, mc).
Location(l) :- location(l, f, sl, sc, el, ec).
Location.getFile(l, f) :- location(l, f, sl, sc, el, ec).
Location.getRelativePath(l, p) :- location(l, f, sl, sc, el, ec), file(f, p, h, lc, cc, mc).
Location.getStartLineNumber(l, sl) :- location(l, f, sl, sc, el, ec).
Location.getEndLineNumber(l, el) :- location(l, f, sl, sc, el, ec).
Class(c) :- class(c, n, f, l).
Class.getName(c, n) :- class(c, n, f, l).
Class.getFile(c, f) :- class(c, n, f, l).
Class.getLocation(c, l) :- class(c, n, f, l).
Class.getBase(c, b) :- class_base(c, i, b).
Callable(f) :- function(f, n, k, p, fl, l).
Callable.getName(f, n) :- function(f, n, k, p, fl, l).
Callable.getKind(f, k) :- function(f, n, k, p, fl, l).
Callable.getFile(f, fl) :- function(f, n, k, p, fl, l).
Callable.getLocation(f, l) :- function(f, n, k, p, fl, l).
Callable.getEnclosingClass(f, p) :- function(f, n, k, p, fl, l), class(p, cn, cf, cl).
Call(c) :- call(c, e, t, l).
Call.getCalleeText(c, t) :- call(c, e, t, l).
Call.getEnclosingFunction(c, e) :- call(c, e, t, l), function(e, n, k, p, fl, loc).
Call.getLocation(c, l) :- call(c, e, t, l).
py.has_class_parent(f) :- function(f, n, k, p, fl, l), class(p, cn, cf, cl).
py.call_base_match(c, f) :- call(c, e, t, l), function(f, fn, k, p, fl, floc), name_match(t, fn).
py.call_same_class(c, f) :- py.call_base_match(c, f), call(c, e, t, l), function(e, en, ek, cls, efl, el2), class(cls, cn, cf, cl), function(f, fn, fk, cls, ffl, fl2).
py.has_same_class(c) :- py.call_same_class(c, f).
py.call_same_file(c, f) :- py.call_base_match(c, f), call(c, e, t, l), location(l, fid, sl, sc, el, ec), function(f, fn, fk, p, fid, fl2).
py.has_same_file(c) :- py.call_same_file(c, f).
py.call_resolved(c, f) :- py.call_same_class(c, f).
py.call_resolved(c, f) :- py.call_same_file(c, f), !py.has_same_class(c).
py.call_resolved(c, f) :- py.call_base_match(c, f), !py.has_same_class(c), !py.has_same_file(c).
Callable.getCaller(m, caller) :- py.call_resolved(c, m), call(c, caller, t, l), function(caller, n, k, p, fl, loc).
Callable.getACallSite(f, c) :- py.call_resolved(c, f).
py.stmt_in(s, f) :- statement(s, k, f, i, l), function(f, n, fk, p, fl, floc).
py.stmt_in(s, f) :- statement(s, k, p, i, l), py.stmt_in(p, f).
py.branch_stmt(s) :- statement(s, "if", p, i, l).
py.branch_stmt(s) :- statement(s, "for", p, i, l).
py.branch_stmt(s) :- statement(s, "while", p, i, l).
py.branch_stmt(s) :- statement(s, "match_case", p, i, l).
py.branch_stmt(s) :- statement(s, "bool_op_branch", p, i, l).
py.branch_stmt(s) :- statement(s, "except_handler", p, i, l).
py.branch_in(s, f) :- py.branch_stmt(s), py.stmt_in(s, f).
"""

_XML_RULES = """
XmlFile(f) :- xml_file(f, n, p, h).
XmlFile.getFileName(f, n) :- xml_file(f, n, p, h).
XmlFile.getRelativePath(f, p) :- xml_file(f, n, p, h).
XmlLocation(l) :- xml_location(l, f, sl, sc, el, ec).
XmlLocation.getFile(l, f) :- xml_location(l, f, sl, sc, el, ec).
XmlLocation.getStartLineNumber(l, sl) :- xml_location(l, f, sl, sc, el, ec).
XmlLocation.getEndLineNumber(l, el) :- xml_location(l, f, sl, sc, el, ec).
XmlElement(e) :- xml_element(e, n, l, p, i).
XmlElement.getElementName(e, n) :- xml_element(e, n, l, p, i).
XmlElement.getLocation(e, l) :- xml_element(e, n, l, p, i).
XmlElement.getParent(e, p) :- xml_element(e, n, l, p, i), xml_element(p, pn, pl, pp, pi).
XmlCharacter(c) :- xml_character(c, t, b, i).
XmlCharacter.getText(c, t) :- xml_character(c, t, b, i).
XmlCharacter.getBelongedElement(c, b) :- xml_character(c, t, b, i), xml_element(b, n, l, p, i2).
"""


def _python_aggregate_rules() -> list[Rule]:
    f, s, p, n, cc, pc, sig, cls = (Var(x) for x in ("f", "s", "p", "n", "cc", "pc", "sig", "cls"))
    fn_row = Pos(Atom("function", (f, Var("nm"), Var("k"), Var("par"), Var("fl"), Var("lo"))))
    fn_row_cls = Pos(Atom("function", (f, Var("nm"), Var("k"), cls, Var("fl"), Var("lo"))))
    param_count = Agg(
        pc, "count", (f,), (p,),
        (Pos(Atom("parameter", (p, f, Var("ix"), Var("pn")))),),
    )
    rules = [
        Rule(
            Atom("Callable.getParameterCount", (f, Var("pc"))),
            (fn_row, param_count),
            provenance="builtin Callable.getParameterCount",
        ),
        Rule(
            Atom("Callable.getCyclomaticComplexity", (f, cc)),
            (
                fn_row,
                Agg(n, "count", (f,), (s,), (Pos(Atom("py.branch_in", (s, f))),)),
                Bind(cc, Arith("+", n, Const(1))),
            ),
            provenance="builtin Callable.getCyclomaticComplexity",
        ),
        # Signatures: Class.name/arity for methods, name/arity otherwise.
        Rule(
            Atom("Callable.getSignature", (f, sig)),
            (
                fn_row_cls,
                Pos(Atom("class", (cls, Var("cn"), Var("cf"), Var("cl")))),
                param_count,
                Bind(sig, Concat((Var("cn"), Const("."), Var("nm"), Const("/"), pc))),
            ),
            provenance="builtin Callable.getSignature (method)",
        ),
        Rule(
            Atom("Callable.getSignature", (f, sig)),
            (
                fn_row,
                Neg(Atom("py.has_class_parent", (f,))),
                param_count,
                Bind(sig, Concat((Var("nm"), Const("/"), pc))),
            ),
            provenance="builtin Callable.getSignature (function)",
        ),
        Rule(
            Atom("Class.getQualifiedName", (Var("c"), Var("q"))),
            (
                Pos(Atom("class", (Var("c"), Var("cn"), Var("cf"), Var("cl")))),
                Pos(Atom("file", (Var("cf"), Var("rp"), Var("h"), Var("a"), Var("b"), Var("d")))),
                Bind(Var("q"), Concat((Var("rp"), Const(":"), Var("cn")))),
            ),
            provenance="builtin Class.getQualifiedName",
        ),
        Rule(
            Atom("Callable.getQualifiedName", (f, Var("q"))),
            (
                fn_row_cls,
                Pos(Atom("class", (cls, Var("cn"), Var("cf"), Var("cl")))),
                Pos(Atom("file", (Var("fl"), Var("rp"), Var("h"), Var("a"), Var("b"), Var("d")))),
                Bind(Var("q"), Concat((Var("rp"), Const(":"), Var("cn"), Const("."), Var("nm")))),
            ),
            provenance="builtin Callable.getQualifiedName (method)",
        ),
        Rule(
            Atom("Callable.getQualifiedName", (f, Var("q"))),
            (
                fn_row,
                Neg(Atom("py.has_class_parent", (f,))),
                Pos(Atom("file", (Var("fl"), Var("rp"), Var("h"), Var("a"), Var("b"), Var("d")))),
                Bind(Var("q"), Concat((Var("rp"), Const(":"), Var("nm")))),
            ),
            provenance="builtin Callable.getQualifiedName (function)",
        ),
    ]
    return rules


def _library_sources(language: str) -> list[tuple[str, str]]:
    package = resources.files("codelog") / "lib" / "coref" / language
    out = []
    for entry in sorted(package.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".gdl"):
            out.append((entry.name, entry.read_text(encoding="utf-8")))
    return out


def _base_catalog(language: str) -> TypeCatalog:
    tier1 = tier1_schemas(language)
    tier1["changed_file"] = CHANGED_FILE_SCHEMA
    catalog = TypeCatalog(language=language, db_type=_DB_TYPES[language], tier1=tier1)

    bindings = _BASE_SCHEMAS[language]
    for schema_name, (relation, field_cols) in bindings.items():
        rel_schema = tier1[relation]
        fields = []
        for fname, col in field_cols.items():
            col_ty = TY_INT if rel_schema.columns[col][1] == "int" else TY_STR
            fields.append((fname, col_ty))
        catalog.schemas[schema_name] = SchemaInfo(
            name=schema_name,
            parent=None,
            fields=fields,
            root=schema_name,
            backing=relation,
            field_cols=dict(field_cols),
        )

    methods = _PYTHON_METHODS if language == "python" else _XML_METHODS
    for schema_name, sigs in methods.items():
        for name, ret, multi in sigs:
            catalog.methods[(schema_name, name)] = MethodSig(schema_name, name, ret, multi)

    rule_text = _PYTHON_RULES if language == "python" else _XML_RULES
    catalog.builtin_rules = parse_rules(rule_text)
    if language == "python":
        catalog.builtin_rules += _python_aggregate_rules()

    # changed_file(f) holds for files a delta-restricted archive marks.
    file_schema = "File" if language == "python" else "XmlFile"
    catalog.functions["changed_file"] = FnSig(
        "changed_file",
        [("f", Ty("schema", file_schema))],
        TY_BOOL,
        builtin_pred="changed_file",
    )

    _declare_builtin_predicates(catalog)
    return catalog


def _declare_builtin_predicates(catalog: TypeCatalog) -> None:
    preds: dict[str, Predicate] = {}
    for rule in catalog.builtin_rules:
        head = rule.head
        existing = preds.get(head.pred)
        if existing is not None and existing.arity != head.arity:
            raise CatalogError(f"builtin predicate {head.pred} declared with two arities")
        preds[head.pred] = Predicate(head.pred, head.arity, "idb")
    catalog.builtin_predicates = preds


@lru_cache(maxsize=None)
def _cached_catalog(language: str) -> TypeCatalog:
    if language not in _DB_TYPES:
        raise CatalogError(f"unknown subject language {language!r}")
    catalog = _base_catalog(language)
    for name, source in _library_sources(language):
        try:
            module = parse(source)
        except Exception as exc:
            raise CatalogError(f"library {name}: {exc}") from exc
        typecheck(module, catalog, is_library=True)
        catalog.library_modules.append(module)
    return catalog


def load_catalog(language: str) -> TypeCatalog:
    """Catalog for a subject language, with the shipped library loaded."""
    return _cached_catalog(language).clone()
