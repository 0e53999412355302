"""Seeded 2-D projection of an embeddings CSV for external plotting.

Thin wrapper around scikit-learn's t-SNE; the projection algorithm itself is
deliberately not reimplemented here.
"""

from __future__ import annotations

import csv

import numpy as np

from . import TooFewRows


def read_embeddings(path):
    with open(path, newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    if rows and rows[0] and rows[0][0] == "key":
        rows = rows[1:]
    keys = [row[0] for row in rows]
    matrix = np.array([[float(v) for v in row[1:]] for row in rows])
    return keys, matrix


def project_2d(keys, matrix, seed: int):
    """(key, e1, e2) coordinate rows, deterministic for a given seed."""
    from sklearn.manifold import TSNE

    n = len(keys)
    if n < 3:
        raise TooFewRows(f"projection needs at least 3 rows, got {n}")
    perplexity = max(1.0, min(30.0, (n - 1) / 3.0))
    tsne = TSNE(n_components=2, random_state=seed, perplexity=perplexity,
                init="pca", learning_rate="auto")
    coords = tsne.fit_transform(matrix)
    return [(key, float(x), float(y)) for key, (x, y) in zip(keys, coords)]


def write_coordinates(rows, out_path) -> None:
    with open(out_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["key", "e1", "e2"])
        for key, x, y in rows:
            writer.writerow([key, repr(x), repr(y)])
