"""XML fact extraction over expat.

Elements, attributes, and text segments with document positions.
Namespace prefixes are kept literally in element names. Text is attached
to the innermost open element, one row per segment between child
elements, stripped of surrounding whitespace; whitespace-only segments
are dropped. Malformed files get a file row plus a diagnostic and no
element facts.
"""

from __future__ import annotations

import posixpath
from dataclasses import dataclass, field
from xml.parsers import expat

from ..facts import content_hash
from .ids import NodePath, node_id
from .pyextract import FileFacts


@dataclass
class _Open:
    element_id: int
    path: NodePath
    child_elements: int = 0
    text_segments: int = 0
    buffer: list[str] = field(default_factory=list)


class _XmlExtractor:
    def __init__(self, relative_path: str, digest: str):
        self.path = relative_path
        self.digest = digest
        self.facts = FileFacts(relative_path, digest, 0)
        self.file_id = node_id(digest, relative_path, (("file", 0),))
        self.stack: list[_Open] = []
        self.root_count = 0
        self.parser = expat.ParserCreate()
        self.parser.ordered_attributes = True
        self.parser.StartElementHandler = self.start_element
        self.parser.EndElementHandler = self.end_element
        self.parser.CharacterDataHandler = self.character_data
        self._pending: list[tuple] = []  # (element row fields...) finished at end tag

    def nid(self, path: NodePath) -> int:
        return node_id(self.digest, self.path, path)

    def flush_text(self) -> None:
        if not self.stack:
            return
        top = self.stack[-1]
        if not top.buffer:
            return
        text = "".join(top.buffer).strip()
        top.buffer.clear()
        if not text:
            return
        seg_path = top.path + (("text", top.text_segments),)
        char_id = self.nid(seg_path)
        self.facts.add(
            "xml_character", (char_id, text, top.element_id, top.text_segments)
        )
        top.text_segments += 1

    def start_element(self, name: str, attrs: list[str]) -> None:
        self.flush_text()
        if self.stack:
            parent = self.stack[-1]
            index_order = parent.child_elements
            parent.child_elements += 1
            parent_id = parent.element_id
            path = parent.path + (("elem", index_order),)
        else:
            index_order = self.root_count
            self.root_count += 1
            parent_id = 0
            path = (("elem", index_order),)
        element_id = self.nid(path)
        start_line = self.parser.CurrentLineNumber
        start_col = self.parser.CurrentColumnNumber
        for i in range(0, len(attrs), 2):
            attr_id = self.nid(path + (("attr", i // 2),))
            self.facts.add("xml_attribute", (attr_id, element_id, attrs[i], attrs[i + 1]))
        self._pending.append((element_id, name, path, parent_id, index_order,
                              start_line, start_col))
        self.stack.append(_Open(element_id, path))

    def end_element(self, name: str) -> None:
        self.flush_text()
        self.stack.pop()
        element_id, elem_name, path, parent_id, index_order, sl, sc = self._pending.pop()
        loc_id = self.nid(path + (("loc", 0),))
        self.facts.add(
            "xml_location",
            (loc_id, self.file_id, sl, sc,
             self.parser.CurrentLineNumber, self.parser.CurrentColumnNumber),
        )
        self.facts.add(
            "xml_element", (element_id, elem_name, loc_id, parent_id, index_order)
        )

    def character_data(self, data: str) -> None:
        if self.stack:
            self.stack[-1].buffer.append(data)


def extract_xml_file(relative_path: str, data: bytes) -> FileFacts:
    digest = content_hash(data)
    extractor = _XmlExtractor(relative_path, digest)
    facts = extractor.facts
    try:
        line_count = len(data.decode("utf-8", errors="replace").splitlines())
    except Exception:
        line_count = 0
    facts.line_count = line_count
    file_name = posixpath.basename(relative_path)
    facts.add("xml_file", (extractor.file_id, file_name, relative_path, digest))
    try:
        extractor.parser.Parse(data, True)
    except expat.ExpatError as exc:
        # Facts from before the error are discarded: a malformed file
        # contributes its file row and one diagnostic.
        clean = FileFacts(relative_path, digest, line_count)
        clean.add("xml_file", (extractor.file_id, file_name, relative_path, digest))
        diag_id = node_id(digest, relative_path, (("diag", 0),))
        clean.add(
            "diagnostic",
            (diag_id, extractor.file_id, "parse_error", str(exc)),
        )
        clean.parse_error = str(exc)
        return clean
    return facts
