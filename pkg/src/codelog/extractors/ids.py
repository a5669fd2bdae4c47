"""Deterministic node identifiers.

A node id is a keyed hash of (file content hash, file path, canonical node
path), where the node path is the sequence of (node kind, child index)
steps from the file root. The same bytes at the same repo-relative path
always produce the same ids, no matter which sibling files exist; that is
what lets the incremental extractor carry unchanged files' rows over
verbatim. Ids fit in a non-negative signed 64-bit integer and are never 0
(0 is the "no parent" sentinel).
"""

from __future__ import annotations

import hashlib

NodePath = tuple[tuple[str, int], ...]

_MASK = (1 << 63) - 1


def node_id(content_hash: str, relative_path: str, node_path: NodePath) -> int:
    parts = [content_hash, relative_path]
    for kind, index in node_path:
        parts.append(kind)
        parts.append(str(index))
    payload = "\x1f".join(parts).encode("utf-8")
    salt = 0
    while True:
        data = payload if salt == 0 else payload + b"\x1e" + str(salt).encode()
        digest = hashlib.blake2b(data, digest_size=8).digest()
        value = int.from_bytes(digest, "big") & _MASK
        if value != 0:
            return value
        salt += 1
