"""Embedding tables for category labels and word-vector averaging.

Vectors are consumed from CSV files (``key,v_1,...,v_E``); the package never
calls an encoder itself. Keys are category codes for sentence-level tables or
word tokens for word-vector tables.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .core import _open_rows, format_number
from .errors import (
    DataError,
    DimensionMismatch,
    DuplicateKey,
    MissingEmbedding,
    NoUsableTokens,
    ZeroVector,
)

_TOKEN_RE = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class EmbeddingTable:
    """Fixed-dimension vector per key."""

    dimension: int
    vectors: dict[str, np.ndarray]
    encoder_name: str = "unknown"

    def __post_init__(self):
        for key, vec in self.vectors.items():
            if vec.shape != (self.dimension,):
                raise DimensionMismatch(f"vector for {key!r} has length {vec.shape}, expected {self.dimension}")
            if not np.any(vec):
                raise ZeroVector(f"all-zero vector for {key!r}")

    def get(self, key: str) -> np.ndarray:
        if key not in self.vectors:
            raise MissingEmbedding(f"no embedding for {key!r} in table {self.encoder_name!r}")
        return self.vectors[key]

    def __contains__(self, key: str) -> bool:
        return key in self.vectors


def load_embedding_table(source, encoder_name: str = "unknown") -> EmbeddingTable:
    """Load ``key,v_1,...,v_E`` rows; a leading ``key,...`` header row is skipped."""
    rows = list(_open_rows(source))
    if rows and rows[0] and rows[0][0].strip() == "key":
        rows = rows[1:]
    if not rows:
        raise DataError("embedding table is empty")
    dimension = None
    vectors: dict[str, np.ndarray] = {}
    for number, row in enumerate(rows, start=1):
        if len(row) < 2:
            raise DimensionMismatch(f"row {number}: need a key and at least one component")
        key = row[0].strip()
        try:
            values = np.array([float(v) for v in row[1:]], dtype=float)
        except ValueError:
            raise DataError(f"row {number}: non-numeric vector component") from None
        if dimension is None:
            dimension = values.size
        elif values.size != dimension:
            raise DimensionMismatch(f"row {number}: vector length {values.size}, expected {dimension}")
        if key in vectors:
            raise DuplicateKey(f"row {number}: duplicate key {key!r}")
        if not np.any(values):
            raise ZeroVector(f"row {number}: all-zero vector for {key!r}")
        vectors[key] = values
    return EmbeddingTable(dimension=dimension, vectors=vectors, encoder_name=encoder_name)


def write_embedding_table(table: EmbeddingTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["key", *(f"v_{i + 1}" for i in range(table.dimension))])
        for key in sorted(table.vectors):
            writer.writerow([key, *(format_number(float(v)) for v in table.vectors[key])])


def default_stopwords() -> frozenset[str]:
    text = resources.files("hierrisk.data").joinpath("stopwords_en.txt").read_text("utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


def load_stopwords(path) -> frozenset[str]:
    with open(path, encoding="utf-8") as handle:
        return frozenset(w.strip().lower() for w in handle if w.strip())


def tokenize(label: str) -> list[str]:
    """Lower-case tokens split on non-alphanumeric runs."""
    return _TOKEN_RE.findall(label.lower())


def average_word_embeddings(label: str, word_table: EmbeddingTable,
                            stopwords: frozenset[str] | None = None):
    """Element-wise mean of the label's word vectors after stop-word removal.

    Tokens absent from the table are skipped and counted. Returns
    ``(vector, skipped)``; raises NoUsableTokens when nothing is left.
    """
    if stopwords is None:
        stopwords = default_stopwords()
    kept = [t for t in tokenize(label) if t not in stopwords]
    found = [word_table.vectors[t] for t in kept if t in word_table]
    skipped = len(kept) - len(found)
    if not found:
        raise NoUsableTokens(f"label {label!r} has no usable tokens "
                             f"({len(kept)} kept, {skipped} out of vocabulary)")
    return np.mean(np.array(found), axis=0), skipped
