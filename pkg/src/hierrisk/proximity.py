"""Scalar proximity metrics and pairwise proximity matrices.

Six metrics: squared Euclidean and its Gaussian similarity transform, the
cosine pair, and the angular pair derived from the cosine. Angular distance
``arccos(cos)/pi`` is a proper metric on [0, 1], which makes it the default
choice for embedding features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionMismatch, ZeroVector

DISTANCE_METRICS = ("squared_euclidean", "cosine_dissim", "angular_distance")
SIMILARITY_METRICS = ("gaussian", "cosine_sim", "angular_similarity")
METRICS = DISTANCE_METRICS + SIMILARITY_METRICS


def _cosine(x: np.ndarray, y: np.ndarray) -> float:
    nx = np.linalg.norm(x)
    ny = np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        raise ZeroVector("cosine-family metrics are undefined for zero vectors")
    if np.array_equal(x, y):
        return 1.0  # identical vectors must land on cos = 1 exactly; arccos is
        # infinitely steep there, so last-bit noise would not stay small
    # clamp: rounding can push |cos| marginally past 1, breaking arccos
    return float(np.clip(np.dot(x, y) / (nx * ny), -1.0, 1.0))


def metric(x, y, metric_name: str, sigma: float | None = None) -> float:
    """Scalar proximity between two vectors."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise DimensionMismatch(f"vector lengths differ: {x.shape} vs {y.shape}")
    if metric_name == "squared_euclidean":
        d = x - y
        return float(np.dot(d, d))
    if metric_name == "gaussian":
        if sigma is None or sigma <= 0:
            raise DataError("gaussian similarity needs a positive sigma")
        d = x - y
        return float(np.exp(-np.dot(d, d) / sigma**2))
    if metric_name == "cosine_sim":
        return _cosine(x, y)
    if metric_name == "cosine_dissim":
        return 1.0 - _cosine(x, y)
    if metric_name == "angular_distance":
        return float(np.arccos(_cosine(x, y)) / np.pi)
    if metric_name == "angular_similarity":
        return 1.0 - float(np.arccos(_cosine(x, y)) / np.pi)
    raise DataError(f"unknown metric {metric_name!r}")


def metric_kind(metric_name: str) -> str:
    if metric_name in DISTANCE_METRICS:
        return "distance"
    if metric_name in SIMILARITY_METRICS:
        return "similarity"
    raise DataError(f"unknown metric {metric_name!r}")


@dataclass(frozen=True)
class ProximityMatrix:
    """Symmetric pairwise proximity values over an ordered key list."""

    kind: str
    metric_name: str
    values: np.ndarray
    keys: tuple[str, ...]

    def __post_init__(self):
        n = len(self.keys)
        if self.values.shape != (n, n):
            raise DataError(f"matrix shape {self.values.shape} does not match {n} keys")
        if not np.allclose(self.values, self.values.T, atol=1e-12):
            raise DataError("proximity matrix must be symmetric")
        diag = np.diag(self.values)
        if self.kind == "distance":
            if not np.allclose(diag, 0.0, atol=1e-12):
                raise DataError("distance matrix must have a zero diagonal")
        elif self.kind == "similarity":
            if not (np.allclose(diag, 1.0, atol=1e-12) or np.allclose(diag, 0.0, atol=1e-12)):
                raise DataError("similarity diagonal must be all 1 (natural) or all 0 (graph form)")
        else:
            raise DataError(f"unknown matrix kind {self.kind!r}")
        if self.metric_name in ("gaussian", "angular_similarity", "angular_distance"):
            off = self.values[~np.eye(n, dtype=bool)]
            if off.size and (off.min() < -1e-12 or off.max() > 1.0 + 1e-12):
                raise DataError(f"{self.metric_name} entries must lie in [0, 1]")

    def index_of(self, key: str) -> int:
        return self.keys.index(key)

    def submatrix(self, keys) -> "ProximityMatrix":
        idx = [self.keys.index(k) for k in keys]
        return ProximityMatrix(self.kind, self.metric_name,
                               self.values[np.ix_(idx, idx)], tuple(keys))


def pairwise(rows, metric_name: str, sigma: float | None = None,
             keys=None, zero_diagonal: bool = False) -> ProximityMatrix:
    """All-pairs proximity matrix of the given rows.

    Distances get a zero diagonal; similarities get diagonal 1 unless
    ``zero_diagonal`` is set (the graph convention expected by spectral
    clustering).
    """
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[0] < 2:
        raise DataError("pairwise needs at least two rows")
    n = rows.shape[0]
    if keys is None:
        keys = tuple(str(i) for i in range(n))
    else:
        keys = tuple(keys)
        if len(keys) != n:
            raise DataError(f"{len(keys)} keys for {n} rows")

    kind = metric_kind(metric_name)
    values = np.zeros((n, n), dtype=float)
    for i in range(n):
        for j in range(i + 1, n):
            values[i, j] = values[j, i] = metric(rows[i], rows[j], metric_name, sigma)
    if kind == "similarity" and not zero_diagonal:
        np.fill_diagonal(values, 1.0)
    return ProximityMatrix(kind=kind, metric_name=metric_name, values=values, keys=keys)


def write_matrix(matrix: ProximityMatrix, path) -> None:
    """Square CSV with the key list as header row and first column."""
    import csv

    from .core import format_number

    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["key", *matrix.keys])
        for key, row in zip(matrix.keys, matrix.values):
            writer.writerow([key, *(format_number(float(v)) for v in row)])
