"""Combinatorial clustering: k-means, k-medoids (PAM), spectral, agglomerative.

All four return a ClusterAssignment with cluster ids canonicalized by first
appearance in key order, so two runs can be compared without worrying about
label permutations. Every algorithm is deterministic given its seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, EigensolverFailure, IsolatedVertex, KTooLarge, DataError
from .proximity import ProximityMatrix

LINKAGES = ("single", "complete", "average")


@dataclass(frozen=True)
class ClusterAssignment:
    """Cluster ids (1..K) per key, plus the objective of the winning run."""

    labels: dict[str, int]
    K: int
    objective: float
    seed: int | None = None
    restarts: int = 1

    def __post_init__(self):
        ids = set(self.labels.values())
        if ids != set(range(1, self.K + 1)):
            raise DataError(f"cluster ids {sorted(ids)} are not exactly 1..{self.K}")
        if not np.isfinite(self.objective):
            raise DataError("objective must be finite")

    def groups(self) -> dict[int, list[str]]:
        out: dict[int, list[str]] = {k: [] for k in range(1, self.K + 1)}
        for key, cid in self.labels.items():
            out[cid].append(key)
        return out


def write_assignment(assignment: ClusterAssignment, path) -> None:
    """Export as ``key,cluster`` rows in key order."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["key", "cluster"])
        for key, cid in assignment.labels.items():
            writer.writerow([key, cid])


def _canonical(keys, raw_labels) -> dict[str, int]:
    """Relabel clusters 1..K by first appearance in key order."""
    mapping: dict = {}
    labels = {}
    for key, raw in zip(keys, raw_labels):
        if raw not in mapping:
            mapping[raw] = len(mapping) + 1
        labels[key] = mapping[raw]
    return labels


def _default_keys(n, keys):
    if keys is None:
        return tuple(str(i) for i in range(n))
    keys = tuple(keys)
    if len(keys) != n:
        raise DataError(f"{len(keys)} keys for {n} rows")
    return keys


# --- k-means -----------------------------------------------------------------


def _distances(rows: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((rows[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _lloyd(rows: np.ndarray, K: int, rng: np.random.Generator, max_iter: int):
    """One k-means run from random-point initialization; returns (labels, wcss)."""
    unique_rows = np.unique(rows, axis=0)
    pick = rng.choice(len(unique_rows), size=K, replace=False)
    centroids = unique_rows[pick].copy()
    n = rows.shape[0]
    labels = np.full(n, -1)
    previous_objective = np.inf
    for _ in range(max_iter):
        dist = _distances(rows, centroids)
        new_labels = dist.argmin(axis=1)
        # a centroid can lose all its points; reseed it on the worst-fit point
        # from a cluster that can spare one
        for cid in range(K):
            if not np.any(new_labels == cid):
                counts = np.bincount(new_labels, minlength=K)
                movable = np.where(counts[new_labels] > 1)[0]
                worst = movable[dist[movable, new_labels[movable]].argmax()]
                centroids[cid] = rows[worst]
                dist = _distances(rows, centroids)
                new_labels = dist.argmin(axis=1)
        objective = float(dist[np.arange(n), new_labels].sum())
        assert objective <= previous_objective + 1e-9, "k-means objective increased"
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        previous_objective = objective
        for cid in range(K):
            members = rows[labels == cid]
            if len(members):
                centroids[cid] = members.mean(axis=0)
    dist = _distances(rows, centroids)
    for cid in range(K):  # force-fill clusters that still ended up empty
        if not np.any(labels == cid):
            counts = np.bincount(labels, minlength=K)
            movable = np.where(counts[labels] > 1)[0]
            worst = movable[dist[movable, labels[movable]].argmax()]
            labels[worst] = cid
            centroids[cid] = rows[worst]
            dist = _distances(rows, centroids)
    objective = float(dist[np.arange(n), labels].sum())
    return labels, objective


def kmeans(rows, K: int, seed: int, restarts: int = 10, max_iter: int = 100,
           keys=None) -> ClusterAssignment:
    """Best of ``restarts`` Lloyd runs by within-cluster sum of squares."""
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise EmptyInput("k-means needs at least one row")
    keys = _default_keys(rows.shape[0], keys)
    distinct = len(np.unique(rows, axis=0))
    if K > distinct:
        raise KTooLarge(f"K={K} exceeds {distinct} distinct rows")
    if restarts < 1:
        raise DataError("restarts must be >= 1")

    streams = np.random.SeedSequence(seed).spawn(restarts)
    best = None
    for r in range(restarts):
        labels, objective = _lloyd(rows, K, np.random.default_rng(streams[r]), max_iter)
        if best is None or objective < best[1] - 1e-12:
            best = (labels, objective)
    labels, objective = best
    return ClusterAssignment(labels=_canonical(keys, labels), K=K,
                             objective=objective, seed=seed, restarts=restarts)


# --- k-medoids (PAM) ----------------------------------------------------------


def _pam_cost(values: np.ndarray, medoids: list[int]) -> float:
    return float(values[:, medoids].min(axis=1).sum())


def pam_build(values: np.ndarray, K: int) -> list[int]:
    """Greedy BUILD initialization: repeatedly add the cost-minimizing medoid."""
    n = values.shape[0]
    medoids = [int(values.sum(axis=0).argmin())]
    while len(medoids) < K:
        current = values[:, medoids].min(axis=1)
        best_c, best_td = None, None
        for c in range(n):
            if c in medoids:
                continue
            td = float(np.minimum(current, values[:, c]).sum())
            if best_td is None or td < best_td - 1e-15:
                best_c, best_td = c, td
        medoids.append(best_c)
    return medoids


def pam_swap(values: np.ndarray, medoids: list[int]) -> list[int]:
    """SWAP phase: apply the best improving single swap until none remains."""
    n = values.shape[0]
    medoids = list(medoids)
    while True:
        cost = _pam_cost(values, medoids)
        best = None
        for mi, m in enumerate(medoids):
            for h in range(n):
                if h in medoids:
                    continue
                candidate = medoids[:mi] + [h] + medoids[mi + 1:]
                c = _pam_cost(values, candidate)
                if c < cost - 1e-12 and (best is None or c < best[0] - 1e-15):
                    best = (c, mi, h)
        if best is None:
            return medoids
        _, mi, h = best
        medoids[mi] = h


def kmedoids(dissimilarity: ProximityMatrix, K: int, seed: int | None = None) -> ClusterAssignment:
    """PAM on a precomputed dissimilarity matrix (BUILD then SWAP)."""
    if dissimilarity.kind != "distance":
        raise DataError("k-medoids needs a dissimilarity matrix")
    n = len(dissimilarity.keys)
    if n == 0:
        raise EmptyInput("empty dissimilarity matrix")
    if K > n:
        raise KTooLarge(f"K={K} exceeds {n} points")
    values = dissimilarity.values
    medoids = pam_swap(values, pam_build(values, K))
    raw = values[:, medoids].argmin(axis=1)  # ties go to the earliest medoid
    return ClusterAssignment(labels=_canonical(dissimilarity.keys, raw), K=K,
                             objective=_pam_cost(values, medoids), seed=seed)


# --- spectral ------------------------------------------------------------------


def spectral(similarity: ProximityMatrix, K: int, seed: int,
             kmeans_restarts: int = 100) -> ClusterAssignment:
    """Normalized-Laplacian spectral clustering.

    Builds ``I - D^(-1/2) S D^(-1/2)``, embeds each point as its row in the
    matrix of the K smallest-eigenvalue eigenvectors (rows scaled to unit
    length) and groups the rows with restarted k-means.
    """
    if similarity.kind != "similarity":
        raise DataError("spectral clustering needs a similarity matrix")
    S = similarity.values
    n = len(similarity.keys)
    if n == 0:
        raise EmptyInput("empty similarity matrix")
    if K > n:
        raise KTooLarge(f"K={K} exceeds {n} points")
    if np.any(np.diag(S) != 0.0):
        raise DataError("spectral input must have a zero diagonal")
    if S.min() < 0:
        raise DataError("spectral input must be non-negative")
    degrees = S.sum(axis=1)
    if np.any(degrees <= 0):
        isolated = similarity.keys[int(np.argmin(degrees))]
        raise IsolatedVertex(f"vertex {isolated!r} has zero degree")

    inv_sqrt = 1.0 / np.sqrt(degrees)
    laplacian = np.eye(n) - inv_sqrt[:, None] * S * inv_sqrt[None, :]
    try:
        eigenvalues, eigenvectors = np.linalg.eigh(laplacian)
    except np.linalg.LinAlgError as exc:
        raise EigensolverFailure(str(exc)) from exc
    embedding = eigenvectors[:, np.argsort(eigenvalues)[:K]]
    norms = np.linalg.norm(embedding, axis=1)
    embedding = embedding / np.maximum(norms, 1e-300)[:, None]

    inner = kmeans(embedding, K, seed=seed, restarts=kmeans_restarts,
                   keys=similarity.keys)
    return ClusterAssignment(labels=inner.labels, K=K, objective=inner.objective,
                             seed=seed, restarts=kmeans_restarts)


# --- agglomerative -------------------------------------------------------------


def _linkage_distance(values: np.ndarray, a: tuple[int, ...], b: tuple[int, ...],
                      linkage: str) -> float:
    block = values[np.ix_(a, b)]
    if linkage == "single":
        return float(block.min())
    if linkage == "complete":
        return float(block.max())
    if linkage == "average":
        return float(block.mean())
    raise DataError(f"unknown linkage {linkage!r}")


def agglomerate(dissimilarity: ProximityMatrix, linkage: str):
    """Full merge trace: list of (members_a, members_b, height), singletons first.

    Ties break on the lexicographically smallest (min-member, min-member) pair,
    which makes the trace deterministic.
    """
    values = dissimilarity.values
    clusters = [(i,) for i in range(len(dissimilarity.keys))]
    trace = []
    while len(clusters) > 1:
        best = None
        for ai in range(len(clusters)):
            for bi in range(ai + 1, len(clusters)):
                d = _linkage_distance(values, clusters[ai], clusters[bi], linkage)
                pair = tuple(sorted((min(clusters[ai]), min(clusters[bi]))))
                if best is None or d < best[0] - 1e-15 or (abs(d - best[0]) <= 1e-15 and pair < best[3]):
                    best = (d, ai, bi, pair)
        d, ai, bi, _ = best
        merged = tuple(sorted(clusters[ai] + clusters[bi]))
        trace.append((clusters[ai], clusters[bi], d))
        clusters = [c for i, c in enumerate(clusters) if i not in (ai, bi)] + [merged]
    return trace


def hca(dissimilarity: ProximityMatrix, K: int, linkage: str = "complete") -> ClusterAssignment:
    """Agglomerative clustering cut at exactly K clusters."""
    if dissimilarity.kind != "distance":
        raise DataError("hca needs a dissimilarity matrix")
    if linkage not in LINKAGES:
        raise DataError(f"linkage must be one of {LINKAGES}, got {linkage!r}")
    n = len(dissimilarity.keys)
    if n == 0:
        raise EmptyInput("empty dissimilarity matrix")
    if K > n:
        raise KTooLarge(f"K={K} exceeds {n} points")

    clusters = [(i,) for i in range(n)]
    height = 0.0
    trace = agglomerate(dissimilarity, linkage)
    for a, b, d in trace[: n - K]:
        clusters = [c for c in clusters if c not in (a, b)] + [tuple(sorted(a + b))]
        height = d
    raw = np.empty(n, dtype=int)
    for cid, members in enumerate(clusters):
        for m in members:
            raw[m] = cid
    return ClusterAssignment(labels=_canonical(dissimilarity.keys, raw), K=K,
                             objective=height)
