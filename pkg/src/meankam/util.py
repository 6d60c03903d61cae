"""Small shared helpers: stable hashing and deterministic CSV output."""

from __future__ import annotations

import hashlib
import json


def stable_hash(obj) -> str:
    """SHA-256 of a canonical JSON encoding; used for cache keys and
    output manifests."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def format_cell(x) -> str:
    """Deterministic, round-trippable cell formatting for CSV bodies."""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(str(h) for h in header) + "\n")
        for row in rows:
            fh.write(",".join(format_cell(x) for x in row) + "\n")
