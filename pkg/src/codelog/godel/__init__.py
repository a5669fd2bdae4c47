"""Query-language frontend: parsing, type checking, lowering to Datalog."""

from ..datalog.ir import DatalogProgram
from .catalog import CatalogError, load_catalog
from .lower import LoweringError, lower
from .oracle import OracleError, interpret_module
from .syntax import Diagnostic, GodelSyntaxError, Module, parse
from .types import TypeCatalog, TypedModule, TypeError_, typecheck


def compile_script(source: str, language: str) -> tuple[DatalogProgram, TypedModule]:
    """Parse, typecheck, and lower a query script for one subject language."""
    module = parse(source)
    catalog = load_catalog(language)
    typed = typecheck(module, catalog)
    return lower(typed), typed


__all__ = [
    "CatalogError",
    "Diagnostic",
    "GodelSyntaxError",
    "LoweringError",
    "Module",
    "OracleError",
    "TypeCatalog",
    "TypeError_",
    "TypedModule",
    "compile_script",
    "interpret_module",
    "load_catalog",
    "lower",
    "parse",
    "typecheck",
]
