"""Datalog intermediate representation and evaluation engine."""

from .ir import (
    Agg,
    Arith,
    Atom,
    Bind,
    Cmp,
    Concat,
    Const,
    DatalogError,
    DatalogProgram,
    EvalError,
    Neg,
    Pos,
    Predicate,
    Rule,
    StratifyError,
    Var,
    check_safety,
)
from .stratify import Stratification, stratify
from .evaluate import EvalStats, apply_rule, evaluate_naive, evaluate_seminaive
from .textfmt import format_program, format_rule, parse_rules

__all__ = [
    "Agg",
    "Arith",
    "Atom",
    "Bind",
    "Cmp",
    "Concat",
    "Const",
    "DatalogError",
    "DatalogProgram",
    "EvalError",
    "EvalStats",
    "Neg",
    "Pos",
    "Predicate",
    "Rule",
    "Stratification",
    "StratifyError",
    "Var",
    "apply_rule",
    "check_safety",
    "evaluate_naive",
    "evaluate_seminaive",
    "format_program",
    "format_rule",
    "parse_rules",
    "stratify",
]
