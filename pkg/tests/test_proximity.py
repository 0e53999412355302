import math

import numpy as np
import pytest

from hierrisk.errors import DataError, DimensionMismatch, ZeroVector
from hierrisk.proximity import ProximityMatrix, metric, pairwise


def test_metric_values_on_axis_vectors():
    x, y = (1.0, 0.0), (0.0, 1.0)
    assert metric(x, x, "angular_distance") == 0.0
    assert metric(x, x, "angular_similarity") == 1.0
    assert metric(x, y, "angular_distance") == pytest.approx(0.5)
    assert metric(x, y, "cosine_sim") == pytest.approx(0.0)
    assert metric((1, 0), (-1, 0), "angular_distance") == pytest.approx(1.0)
    assert metric((1, 0), (-1, 0), "cosine_sim") == pytest.approx(-1.0)
    assert metric(x, y, "squared_euclidean") == pytest.approx(2.0)
    assert metric(x, y, "gaussian", sigma=1.0) == pytest.approx(math.exp(-2.0))


def test_metric_errors():
    with pytest.raises(DimensionMismatch):
        metric((1, 0), (1, 0, 0), "squared_euclidean")
    with pytest.raises(ZeroVector):
        metric((0, 0), (1, 0), "cosine_sim")
    with pytest.raises(DataError):
        metric((1, 0), (0, 1), "gaussian")  # sigma required
    with pytest.raises(DataError):
        metric((1, 0), (0, 1), "nope")


def test_angular_triangle_inequality():
    rng = np.random.default_rng(7)
    for _ in range(10_000):
        x, y, z = rng.normal(size=(3, 4))
        dxy = metric(x, y, "angular_distance")
        dxz = metric(x, z, "angular_distance")
        dzy = metric(z, y, "angular_distance")
        assert dxy <= dxz + dzy + 1e-9


def test_angular_pair_sums_to_one():
    rng = np.random.default_rng(11)
    for _ in range(200):
        x, y = rng.normal(size=(2, 6))
        assert metric(x, y, "angular_similarity") + metric(x, y, "angular_distance") == pytest.approx(1.0, abs=1e-12)


def test_cosine_scale_invariance():
    rng = np.random.default_rng(3)
    for _ in range(200):
        x, y = rng.normal(size=(2, 5))
        a, b = rng.uniform(0.1, 10, size=2)
        assert metric(a * x, b * y, "cosine_sim") == pytest.approx(metric(x, y, "cosine_sim"), abs=1e-12)


def test_pairwise_matches_scalar_loop():
    rng = np.random.default_rng(5)
    rows = rng.normal(size=(6, 3))
    for name, sigma in [("squared_euclidean", None), ("angular_distance", None),
                        ("gaussian", 2.0), ("angular_similarity", None)]:
        matrix = pairwise(rows, name, sigma)
        for i in range(6):
            for j in range(6):
                expected = metric(rows[i], rows[j], name, sigma) if i != j else (
                    0.0 if matrix.kind == "distance" else 1.0)
                assert matrix.values[i, j] == pytest.approx(expected, abs=1e-12)


def test_pairwise_identical_rows_angular():
    matrix = pairwise([(1.0, 1.0), (1.0, 1.0)], "angular_distance")
    assert np.allclose(matrix.values, 0.0)


def test_gaussian_sigma_limit():
    rng = np.random.default_rng(9)
    rows = rng.normal(size=(4, 3))
    matrix = pairwise(rows, "gaussian", sigma=1e9)
    off = matrix.values[~np.eye(4, dtype=bool)]
    assert np.all(off > 1 - 1e-9)


def test_zero_diagonal_flag_for_graph_input():
    rows = [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
    natural = pairwise(rows, "angular_similarity")
    graph = pairwise(rows, "angular_similarity", zero_diagonal=True)
    assert np.all(np.diag(natural.values) == 1.0)
    assert np.all(np.diag(graph.values) == 0.0)


def test_matrix_validation():
    bad = np.array([[0.0, 1.0], [2.0, 0.0]])
    with pytest.raises(DataError):
        ProximityMatrix("distance", "squared_euclidean", bad, ("a", "b"))
    with pytest.raises(DataError):
        ProximityMatrix("distance", "squared_euclidean",
                        np.array([[1.0, 1.0], [1.0, 0.0]]), ("a", "b"))


def test_matrix_csv_roundtrip(tmp_path):
    from hierrisk.proximity import write_matrix

    rows = np.random.default_rng(1).normal(size=(4, 3))
    matrix = pairwise(rows, "angular_distance", keys=["a", "b", "c", "d"])
    path = tmp_path / "matrix.csv"
    write_matrix(matrix, path)
    import csv
    with open(path) as handle:
        loaded = list(csv.reader(handle))
    assert loaded[0] == ["key", "a", "b", "c", "d"]
    values = np.array([[float(v) for v in row[1:]] for row in loaded[1:]])
    assert np.array_equal(values, matrix.values)
