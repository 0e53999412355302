import numpy as np
import pytest

from hierrisk.core import CategoryNode, CategoryPath, HierarchySpec, PolicyRecord, Portfolio
from hierrisk.effects import FeatureMatrix
from hierrisk.embeddings import EmbeddingTable
from hierrisk.errors import ConfigError
from hierrisk.pipeline import (
    LevelGrid,
    check_nesting,
    enforce_mass_constraint,
    grid_search_level,
    load_solution,
    merge_consecutive,
    reduce_hierarchy,
    write_solution,
)
from hierrisk.simulate import GeneratorSpec, adjusted_rand_index, generate

from oracles import naive_calinski_harabasz


def test_merge_consecutive_all_sufficient():
    blocks = merge_consecutive(["1", "2", "3"], {"1": 3, "2": 3, "3": 3}, 2)
    assert blocks == [("1",), ("2",), ("3",)]


def test_merge_consecutive_accumulates():
    blocks = merge_consecutive(["1", "2", "3"], {"1": 1, "2": 1, "3": 3}, 2)
    assert blocks == [("1", "2"), ("3",)]


def test_merge_consecutive_trailing_deficit():
    blocks = merge_consecutive(["1", "2"], {"1": 3, "2": 1}, 2)
    assert blocks == [("1", "2")]


def test_merge_consecutive_sorts_numerically():
    blocks = merge_consecutive(["10", "2", "9"], {"10": 5, "2": 5, "9": 5}, 2)
    assert blocks == [("2",), ("9",), ("10",)]


def test_enforce_mass_no_op():
    groups, ok = enforce_mass_constraint([("1",), ("2",), ("3",)],
                                         {"1": 5, "2": 5, "3": 5}, 2)
    assert ok and groups == [("1",), ("2",), ("3",)]


def test_enforce_mass_merges_left_on_tie():
    groups, ok = enforce_mass_constraint([("1",), ("2",), ("3",)],
                                         {"1": 5, "2": 1, "3": 5}, 2)
    assert ok and groups == [("1", "2"), ("3",)]


def test_enforce_mass_prefers_numerically_nearest():
    groups, ok = enforce_mass_constraint([("10",), ("45",), ("47",)],
                                         {"10": 5, "45": 1, "47": 5}, 2)
    assert ok and groups == [("10",), ("45", "47")]


def test_enforce_mass_total_insufficient():
    groups, ok = enforce_mass_constraint([("1",), ("2",)], {"1": 0.5, "2": 0.4}, 2)
    assert not ok and groups == [("1", "2")]


def blob_matrices(offsets, n_per=4, seed=0):
    rng = np.random.default_rng(seed)
    rows = np.vstack([rng.normal(size=(n_per, 3)) * 0.1 + off for off in offsets])
    keys = tuple(str(i + 1) for i in range(rows.shape[0]))
    return {"enc": FeatureMatrix(keys=keys, values=rows, encoder_name="enc")}


def test_grid_search_single_cell():
    matrices = blob_matrices([(0, 0, 0), (8, 8, 8)])
    encoder, k, assignment, cells, flags = grid_search_level(
        matrices, "kmeans", "calinski_harabasz", "risk_euclidean", [2], seed=1)
    assert (encoder, k) == ("enc", 2)
    assert len(cells) == 1 and cells[0].chosen


def test_grid_search_prefers_true_k_by_brute_force():
    matrices = blob_matrices([(0, 0, 0), (8, 8, 8)])
    encoder, k, assignment, cells, flags = grid_search_level(
        matrices, "kmeans", "calinski_harabasz", "risk_euclidean", [2, 3], seed=1)
    assert k == 2
    # brute-force: the chosen cell's index value must equal the naive oracle's
    rows = matrices["enc"].risk_rows()
    labels = [assignment.labels[key] for key in matrices["enc"].keys]
    chosen = [c for c in cells if c.chosen][0]
    assert chosen.index_value == pytest.approx(
        naive_calinski_harabasz(rows.tolist(), labels), rel=1e-10)


def test_grid_log_is_exhaustive():
    matrices = blob_matrices([(0, 0, 0), (8, 8, 8)])
    matrices["enc2"] = FeatureMatrix(keys=matrices["enc"].keys,
                                     values=matrices["enc"].values + 0.01,
                                     encoder_name="enc2")
    _, _, _, cells, _ = grid_search_level(
        matrices, "kmeans", "silhouette", "risk_euclidean", [2, 3, 4], seed=1)
    assert len(cells) == 6  # 2 encoders x 3 candidates


def one_level_portfolio():
    roots = tuple(CategoryNode(c, f"cat {c}") for c in ("1", "2", "3"))
    hierarchy = HierarchySpec(level_names=("level1",), roots=roots)
    records = []
    for c in ("1", "2", "3"):
        for i in range(3):
            records.append(PolicyRecord(f"co{c}{i}", 2000 + i, CategoryPath((c,)),
                                        2.0, 1, 2.0))
    return Portfolio(tuple(records), hierarchy)


def identity_embeddings(keys, dim=3):
    rng = np.random.default_rng(1)
    return {"enc": EmbeddingTable(dimension=dim, vectors={
        k: rng.normal(size=dim) for k in keys}, encoder_name="enc")}


def test_degenerate_single_cluster_grid():
    portfolio = one_level_portfolio()
    tables = identity_embeddings(["1", "2", "3"])
    solution = reduce_hierarchy(portfolio, tables, algorithm="kmeans",
                                index_name="calinski_harabasz",
                                variant="risk_euclidean",
                                grids=[LevelGrid(1, (1,), ("enc",))],
                                min_mass=0.1, seed=3)
    assert solution.grouped_count(0) == 1
    assert set(solution.level_maps[0]) == {"1", "2", "3"}


def test_grid_truncated_when_min_exceeds_categories():
    portfolio = one_level_portfolio()
    tables = identity_embeddings(["1", "2", "3"])
    solution = reduce_hierarchy(portfolio, tables, algorithm="kmeans",
                                index_name="calinski_harabasz",
                                variant="risk_euclidean",
                                grids=[LevelGrid(1, (5, 6), ("enc",))],
                                min_mass=0.1, seed=3)
    assert solution.grouped_count(0) == 3
    assert any("truncated" in note for note in solution.metadata["notes"])


def test_invalid_configuration_rejected():
    portfolio = one_level_portfolio()
    tables = identity_embeddings(["1", "2", "3"])
    grid = [LevelGrid(1, (2,), ("enc",))]
    with pytest.raises(ConfigError):
        reduce_hierarchy(portfolio, tables, algorithm="dbscan",
                         index_name="calinski_harabasz",
                         variant="risk_euclidean", grids=grid, min_mass=1, seed=1)
    with pytest.raises(ConfigError):
        reduce_hierarchy(portfolio, tables, algorithm="kmeans",
                         index_name="gap", variant="risk_euclidean",
                         grids=grid, min_mass=1, seed=1)
    with pytest.raises(ConfigError):
        reduce_hierarchy(portfolio, tables, algorithm="kmeans",
                         index_name="calinski_harabasz", variant="cosine",
                         grids=grid, min_mass=1, seed=1)


@pytest.fixture(scope="module")
def planted():
    data = generate(GeneratorSpec())
    grids = [LevelGrid(1, tuple(range(2, 9)), ("enc_a", "enc_b")),
             LevelGrid(2, tuple(range(2, 7)), ("enc_a", "enc_b"))]
    solution = reduce_hierarchy(data.portfolio, data.embeddings,
                                algorithm="hca", index_name="silhouette",
                                variant="full_angular", grids=grids,
                                min_mass=100.0, seed=99)
    return data, grids, solution


def test_planted_structure_recovered(planted):
    data, _, solution = planted
    assert adjusted_rand_index(data.truth_level1, solution.level_maps[0]) >= 0.9
    assert adjusted_rand_index(data.truth_level2, solution.level_maps[1]) >= 0.9


def test_nesting_preserved(planted):
    data, _, solution = planted
    assert check_nesting(solution, data.portfolio.hierarchy)
    for node in data.portfolio.hierarchy.nodes_at_level(0):
        for child in node.children:
            assert solution.group_of(1, child.code).split(".")[0] == \
                solution.group_of(0, node.code)


def test_grouped_counts_within_grid_bounds(planted):
    data, grids, solution = planted
    assert min(grids[0].k_candidates) <= solution.grouped_count(0) <= max(grids[0].k_candidates)
    assert solution.grouped_count(0) < len(data.truth_level1)
    assert solution.grouped_count(1) < len(data.truth_level2)


def test_determinism(planted):
    data, grids, solution = planted
    again = reduce_hierarchy(data.portfolio, data.embeddings,
                             algorithm="hca", index_name="silhouette",
                             variant="full_angular", grids=grids,
                             min_mass=100.0, seed=99)
    assert again.level_maps == solution.level_maps
    assert again.grid_log == solution.grid_log


def test_solution_roundtrip(tmp_path, planted):
    _, _, solution = planted
    path = tmp_path / "solution.csv"
    write_solution(solution, path)
    loaded = load_solution(path)
    assert loaded.level_maps == solution.level_maps


def test_worked_example_topology():
    # three parents (45, 80, 85) with nine children; 80 and 85 carry the same
    # profile so the level-1 grouping {45}, {80;85} is feasible under K=2
    rng = np.random.default_rng(8)
    children = {"45": ("451100", "453100", "454500"),
                "80": ("801000", "802100", "803000"),
                "85": ("851400", "852000", "853100")}
    roots = tuple(CategoryNode(p, f"parent {p}", tuple(
        CategoryNode(c, f"child {c}") for c in kids))
        for p, kids in children.items())
    hierarchy = HierarchySpec(level_names=("l1", "l2"), roots=roots)

    # profiles: 45 low risk; 80 and 85 identical high risk
    rate_of = {"45": 0.5, "80": 3.0, "85": 3.0}
    child_rate = {"451100": 1.0, "453100": 0.4, "454500": 0.4,
                  "801000": 3.0, "802100": 3.0, "803000": 3.0,
                  "851400": 1.5, "852000": 1.5, "853100": 5.0}
    records = []
    for parent, kids in children.items():
        for child in kids:
            for i in range(30):
                mass = 2.0
                rate = child_rate[child] * (1.0 + 0.05 * rng.standard_normal())
                records.append(PolicyRecord(f"c{child}{i}", 2000 + i % 3,
                                            CategoryPath((parent, child)),
                                            abs(rate) * mass, 1, mass))
    portfolio = Portfolio(tuple(records), hierarchy)

    vectors = {}
    anchor = {"45": np.array([4.0, 0.0, 0.0]), "80": np.array([0.0, 4.0, 0.0]),
              "85": np.array([0.1, 4.0, 0.0])}
    for parent, kids in children.items():
        vectors[parent] = anchor[parent]
        for child in kids:
            vectors[child] = anchor[parent] + np.array(
                [0.0, 0.0, float(child_rate[child])])
    tables = {"enc": EmbeddingTable(dimension=3, vectors=vectors, encoder_name="enc")}

    solution = reduce_hierarchy(portfolio, tables, algorithm="kmedoids",
                                index_name="silhouette", variant="risk_euclidean",
                                grids=[LevelGrid(1, (2,), ("enc",)),
                                       LevelGrid(2, (2, 3), ("enc",))],
                                min_mass=1.0, seed=5)
    level1 = solution.level_maps[0]
    assert level1["80"] == level1["85"] != level1["45"]
    level2 = solution.level_maps[1]
    assert level2["453100"] == level2["454500"] != level2["451100"]
    # children of the fused {80;85} parent form three groups, one of which is
    # {851400, 852000} and another the singleton 853100
    fused = {c: level2[c] for c in
             ("801000", "802100", "803000", "851400", "852000", "853100")}
    assert fused["851400"] == fused["852000"]
    assert len(set(fused.values())) == 3
    assert check_nesting(solution, hierarchy)


def test_level_collapse_is_reported():
    rng = np.random.default_rng(3)
    roots = tuple(CategoryNode(p, f"p{p}", (CategoryNode(p + "01", "a"),
                                            CategoryNode(p + "02", "b")))
                  for p in ("01", "02"))
    hierarchy = HierarchySpec(level_names=("l1", "l2"), roots=roots)
    records = []
    for p, rate in (("01", 1.0), ("02", 4.0)):
        for child in (p + "01", p + "02"):
            for i in range(10):
                records.append(PolicyRecord(f"c{child}{i}", 2000,
                                            CategoryPath((p, child)),
                                            rate * 2.0, 1, 2.0))
    portfolio = Portfolio(tuple(records), hierarchy)
    keys = ["01", "02", "0101", "0102", "0201", "0202"]
    tables = {"enc": EmbeddingTable(dimension=2, vectors={
        k: np.array([1.0, float(k[:2] == "02")]) + 0.01 * rng.normal(size=2)
        for k in keys}, encoder_name="enc")}
    solution = reduce_hierarchy(portfolio, tables, algorithm="kmeans",
                                index_name="calinski_harabasz",
                                variant="risk_euclidean",
                                grids=[LevelGrid(1, (2,), ("enc",)),
                                       LevelGrid(2, (1,), ("enc",))],
                                min_mass=0.1, seed=2)
    assert solution.metadata.get("level_dropped") == 2
    assert solution.grouped_count(1) == solution.grouped_count(0)


def test_compact_infinite_index_wins_below_trivial_k():
    # six rows collapsing onto two distinct points: K=2 has zero within-SS so
    # CH is +inf (degenerate-compact) and must beat finite K=3 cells; K=4..6
    # cells are infeasible for k-means (two distinct rows) and stay flagged
    rows = np.array([[0.0, 0.0]] * 3 + [[9.0, 9.0]] * 3)
    rows_jittered = rows.copy()
    rows_jittered[1] += 1e-3  # make K=3 feasible but clearly worse
    rows_jittered[4] -= 1e-3
    matrices = {"enc": FeatureMatrix(keys=tuple("abcdef"), values=rows_jittered,
                                     encoder_name="enc")}
    encoder, k, assignment, cells, flags = grid_search_level(
        matrices, "kmeans", "calinski_harabasz", "risk_euclidean",
        [2, 3], seed=4)
    assert k == 2
    chosen = [c for c in cells if c.chosen][0]
    assert not chosen.degenerate


def test_infeasible_cells_are_flagged_not_fatal():
    rows = np.array([[0.0, 0.0]] * 3 + [[9.0, 9.0]] * 3)  # 2 distinct rows
    matrices = {"enc": FeatureMatrix(keys=tuple("abcdef"), values=rows,
                                     encoder_name="enc")}
    encoder, k, assignment, cells, flags = grid_search_level(
        matrices, "kmeans", "calinski_harabasz", "risk_euclidean",
        [2, 4], seed=4)
    assert k == 2
    infeasible = [c for c in cells if c.k == 4][0]
    assert infeasible.degenerate and np.isnan(infeasible.index_value)


def test_mass_constraint_holds_after_reduction():
    data = generate(GeneratorSpec(seed=3, companies_per_category=2, years=3,
                                  split_year=2))
    masses = {}
    for record in data.portfolio.train_records():
        code = record.path.codes[0]
        masses[code] = masses.get(code, 0.0) + record.salary_mass
    min_mass = 2.2 * min(masses.values())  # force some level-1 merging
    grids = [LevelGrid(1, tuple(range(2, 9)), ("enc_a",)),
             LevelGrid(2, tuple(range(2, 7)), ("enc_a",))]
    solution = reduce_hierarchy(data.portfolio, data.embeddings,
                                algorithm="kmedoids", index_name="silhouette",
                                variant="full_angular", grids=grids,
                                min_mass=min_mass, seed=11)
    group_mass = {}
    for code, gid in solution.level_maps[0].items():
        group_mass[gid] = group_mass.get(gid, 0.0) + masses[code]
    assert all(m >= min_mass for m in group_mass.values())
    masses2 = {}
    for record in data.portfolio.train_records():
        code = record.path.codes[1]
        masses2[code] = masses2.get(code, 0.0) + record.salary_mass
    block_mass = {}
    for code, gid in solution.level_maps[1].items():
        block_mass[gid] = block_mass.get(gid, 0.0) + masses2[code]
    assert all(m >= min_mass for m in block_mass.values())
    assert check_nesting(solution, data.portfolio.hierarchy)


def test_category_without_training_records_still_grouped():
    rng = np.random.default_rng(4)
    codes = ("1", "2", "3", "4")
    roots = tuple(CategoryNode(c, f"cat {c}") for c in codes)
    hierarchy = HierarchySpec(level_names=("level1",), roots=roots)
    records = []
    for c, rate in (("1", 1.0), ("2", 1.1), ("3", 5.0)):  # "4" has no data
        for i in range(4):
            noisy = rate * (1 + 0.02 * rng.standard_normal())
            records.append(PolicyRecord(f"co{c}{i}", 2000, CategoryPath((c,)),
                                        abs(noisy) * 2.0, 1, 2.0))
    portfolio = Portfolio(tuple(records), hierarchy)
    vectors = {"1": np.array([1.0, 0.0]), "2": np.array([1.0, 0.1]),
               "3": np.array([0.0, 1.0]), "4": np.array([0.1, 1.0])}
    tables = {"enc": EmbeddingTable(dimension=2, vectors=vectors, encoder_name="enc")}
    solution = reduce_hierarchy(portfolio, tables, algorithm="kmedoids",
                                index_name="silhouette", variant="full_angular",
                                grids=[LevelGrid(1, (2,), ("enc",))],
                                min_mass=0.1, seed=1)
    assert "4" in solution.level_maps[0]
    # grouped by embedding similarity next to category 3
    assert solution.level_maps[0]["4"] == solution.level_maps[0]["3"]
    assert any("no training records" in note for note in solution.metadata["notes"])


def test_invalid_linkage_rejected_upfront():
    portfolio = one_level_portfolio()
    tables = identity_embeddings(["1", "2", "3"])
    with pytest.raises(ConfigError):
        reduce_hierarchy(portfolio, tables, algorithm="hca",
                         index_name="silhouette", variant="full_angular",
                         grids=[LevelGrid(1, (2,), ("enc",))],
                         min_mass=1, seed=1, linkage="ward")
