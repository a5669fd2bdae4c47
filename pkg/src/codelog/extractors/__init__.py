"""Build-independent fact extraction for the two subject languages."""

from .ids import node_id
from .merge import ExtractionResult, extract_worktree, merge_file_facts
from .pyextract import extract_python_file
from .xmlextract import extract_xml_file

__all__ = [
    "ExtractionResult",
    "extract_python_file",
    "extract_worktree",
    "extract_xml_file",
    "merge_file_facts",
    "node_id",
]
