"""codelog: relational code analysis.

Source files are extracted into per-file fact relations (the stored
tier); queries written in a small declarative language compile to Datalog
and derive everything else on demand (the computed tier). Extraction is
incremental by file content, evaluation is staged semi-naive fixpoint,
and results are cached by content.
"""

__version__ = "0.1.0"
