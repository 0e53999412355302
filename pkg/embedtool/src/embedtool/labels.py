"""Label files: one (key, label text) row per category."""

from __future__ import annotations

import csv
from dataclasses import dataclass

from . import LabelFileError


@dataclass(frozen=True)
class LabelFile:
    rows: tuple[tuple[str, str], ...]  # (key, label), input order preserved

    def __post_init__(self):
        seen = set()
        for key, label in self.rows:
            if key in seen:
                raise LabelFileError(f"duplicate key {key!r}")
            if not label.strip():
                raise LabelFileError(f"empty label for key {key!r}")
            seen.add(key)


def load_labels(path) -> LabelFile:
    """Read a ``key,label`` CSV (header required)."""
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["key", "label"]:
            raise LabelFileError(f"expected header 'key,label', got {header}")
        rows = []
        for row in reader:
            if len(row) < 2:
                raise LabelFileError(f"short row {row}")
            rows.append((row[0].strip(), row[1].strip()))
    if not rows:
        raise LabelFileError("label file has no rows")
    return LabelFile(rows=tuple(rows))
