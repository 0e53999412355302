"""Internal cluster validation indices: Calinski-Harabasz, Davies-Bouldin,
Dunn and silhouette.

CH is defined in terms of squared Euclidean distances and always uses them;
the other three take a pluggable distance so they can run either on the full
feature vector with the angular distance or on the risk-only features with
the squared Euclidean distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import ClusterAssignment
from .errors import KOutOfRange
from .proximity import ProximityMatrix, metric

INDEX_NAMES = ("calinski_harabasz", "davies_bouldin", "dunn", "silhouette")
DIRECTIONS = {"calinski_harabasz": "maximize", "davies_bouldin": "minimize",
              "dunn": "maximize", "silhouette": "maximize"}


@dataclass(frozen=True)
class IndexValue:
    """One validation-index evaluation; ``degenerate`` marks +/-inf edge cases."""

    name: str
    value: float
    direction: str
    degenerate: bool = False


def _groups_as_indices(assignment: ClusterAssignment, keys) -> list[np.ndarray]:
    position = {key: i for i, key in enumerate(keys)}
    groups = []
    for cid in range(1, assignment.K + 1):
        members = [position[k] for k, c in assignment.labels.items() if c == cid]
        groups.append(np.array(sorted(members), dtype=int))
    return groups


def calinski_harabasz(rows, assignment: ClusterAssignment) -> IndexValue:
    """Ratio of average between- to within-cluster sum of squares."""
    rows = np.asarray(rows, dtype=float)
    J = rows.shape[0]
    K = assignment.K
    if not 2 <= K < J:
        raise KOutOfRange(f"calinski_harabasz needs 2 <= K < J, got K={K}, J={J}")
    groups = _groups_as_indices(assignment, list(assignment.labels))
    overall = rows.mean(axis=0)
    between = 0.0
    within = 0.0
    for members in groups:
        centroid = rows[members].mean(axis=0)
        between += len(members) * float(((centroid - overall) ** 2).sum())
        within += float(((rows[members] - centroid) ** 2).sum())
    if within == 0.0:
        return IndexValue("calinski_harabasz", np.inf, "maximize", degenerate=True)
    value = (between / (K - 1)) / (within / (J - K))
    return IndexValue("calinski_harabasz", value, "maximize")


def davies_bouldin(rows, assignment: ClusterAssignment,
                   metric_name: str = "squared_euclidean",
                   sigma: float | None = None) -> IndexValue:
    """Mean over clusters of the worst (within_a + within_b) / d(centroid_a, centroid_b).

    Centroids are arithmetic means of the rows; the chosen distance is applied
    to them even when it is not Euclidean.
    """
    rows = np.asarray(rows, dtype=float)
    J = rows.shape[0]
    K = assignment.K
    if not 2 <= K <= J:
        raise KOutOfRange(f"davies_bouldin needs 2 <= K <= J, got K={K}, J={J}")
    groups = _groups_as_indices(assignment, list(assignment.labels))
    centroids = np.array([rows[m].mean(axis=0) for m in groups])
    within = np.array([
        float(np.mean([metric(rows[i], centroids[g], metric_name, sigma) for i in members]))
        for g, members in enumerate(groups)
    ])
    total = 0.0
    for a in range(K):
        worst = -np.inf
        for b in range(K):
            if a == b:
                continue
            separation = metric(centroids[a], centroids[b], metric_name, sigma)
            if separation == 0.0:
                return IndexValue("davies_bouldin", np.inf, "minimize", degenerate=True)
            worst = max(worst, (within[a] + within[b]) / separation)
        total += worst
    return IndexValue("davies_bouldin", total / K, "minimize")


def dunn(dissimilarity: ProximityMatrix, assignment: ClusterAssignment) -> IndexValue:
    """Minimum between-cluster distance over maximum within-cluster diameter."""
    J = len(dissimilarity.keys)
    K = assignment.K
    if not 2 <= K <= J:
        raise KOutOfRange(f"dunn needs 2 <= K <= J, got K={K}, J={J}")
    groups = _groups_as_indices(assignment, dissimilarity.keys)
    values = dissimilarity.values
    diameter = 0.0
    for members in groups:
        if len(members) > 1:
            diameter = max(diameter, float(values[np.ix_(members, members)].max()))
    if diameter == 0.0:
        return IndexValue("dunn", np.inf, "maximize", degenerate=True)
    separation = np.inf
    for a in range(K):
        for b in range(a + 1, K):
            separation = min(separation, float(values[np.ix_(groups[a], groups[b])].min()))
    return IndexValue("dunn", separation / diameter, "maximize")


def silhouette(dissimilarity: ProximityMatrix, assignment: ClusterAssignment) -> IndexValue:
    """Average silhouette width; observations in singleton clusters score 0."""
    J = len(dissimilarity.keys)
    K = assignment.K
    if not 2 <= K < J:
        raise KOutOfRange(f"silhouette needs 2 <= K < J, got K={K}, J={J}")
    groups = _groups_as_indices(assignment, dissimilarity.keys)
    values = dissimilarity.values
    sizes = [len(m) for m in groups]
    total = 0.0
    for g, members in enumerate(groups):
        for i in members:
            if sizes[g] == 1:
                continue  # singleton rule: s = 0
            a = float(values[i, members].sum()) / (sizes[g] - 1)
            b = min(float(values[i, other].mean())
                    for h, other in enumerate(groups) if h != g)
            denom = max(a, b)
            if denom > 0.0:
                total += (b - a) / denom
    return IndexValue("silhouette", total / J, "maximize")


def compute_index(name: str, rows, assignment: ClusterAssignment,
                  metric_name: str = "squared_euclidean",
                  sigma: float | None = None,
                  dissimilarity: ProximityMatrix | None = None) -> IndexValue:
    """Evaluate one index by name, building the pairwise matrix if needed."""
    from .proximity import pairwise

    if name == "calinski_harabasz":
        return calinski_harabasz(rows, assignment)
    if name == "davies_bouldin":
        return davies_bouldin(rows, assignment, metric_name, sigma)
    if dissimilarity is None:
        dissimilarity = pairwise(rows, metric_name, sigma, keys=list(assignment.labels))
    if name == "dunn":
        return dunn(dissimilarity, assignment)
    if name == "silhouette":
        return silhouette(dissimilarity, assignment)
    raise KOutOfRange(f"unknown index {name!r}")
