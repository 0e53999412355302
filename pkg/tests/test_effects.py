import math

import numpy as np
import pytest

from hierrisk.core import CategoryNode, CategoryPath, HierarchySpec, PolicyRecord, Portfolio
from hierrisk.effects import (
    build_feature_matrix,
    fit_damage_rate_lmm,
    fit_frequency_poisson,
)
from hierrisk.embeddings import EmbeddingTable
from hierrisk.errors import MissingEffect, MissingEmbedding


def tiny_hierarchy(codes):
    roots = tuple(CategoryNode(c, f"category {c}") for c in codes)
    return HierarchySpec(level_names=("level1",), roots=roots)


def make_portfolio(cells, counts=None):
    """cells: list of (category, rate, weight); one record per entry."""
    records = []
    for i, (cat, rate, weight) in enumerate(cells):
        count = 1 if rate > 0 else 0
        if counts is not None:
            count = counts[i]
        records.append(PolicyRecord(company_id=f"c{i}", year=2000 + (i % 3),
                                    path=CategoryPath((cat,)),
                                    claim_amount=rate * weight, claim_count=count,
                                    salary_mass=weight))
    hierarchy = tiny_hierarchy(sorted({c for c, _, _ in cells}))
    return Portfolio(records=tuple(records), hierarchy=hierarchy)


def count_portfolio(cells):
    """cells: list of (category, claim_count, weight)."""
    records = []
    for i, (cat, count, weight) in enumerate(cells):
        records.append(PolicyRecord(company_id=f"c{i}", year=2000,
                                    path=CategoryPath((cat,)),
                                    claim_amount=float(count), claim_count=count,
                                    salary_mass=weight))
    hierarchy = tiny_hierarchy(sorted({c for c, _, _ in cells}))
    return Portfolio(records=tuple(records), hierarchy=hierarchy)


def by_level1(record):
    return record.path.codes[0]


def dense_henderson_oracle(y, w, g1, s1, se, g2=None, s2=None):
    """Record-level dense mixed-model-equation solve (independent of the package)."""
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    n = len(y)
    cats1 = sorted(set(g1))
    Z1 = np.zeros((n, len(cats1)))
    for i, g in enumerate(g1):
        Z1[i, cats1.index(g)] = 1.0
    design = [np.ones((n, 1)), Z1]
    lams = [np.zeros((1, 1)), (se / s1) * np.eye(len(cats1))]
    cats2 = []
    if g2 is not None:
        cats2 = sorted(set(g2))
        Z2 = np.zeros((n, len(cats2)))
        for i, g in enumerate(g2):
            Z2[i, cats2.index(g)] = 1.0
        design.append(Z2)
        lams.append((se / s2) * np.eye(len(cats2)))
    T = np.hstack(design)
    W = np.diag(w)
    M = T.T @ W @ T
    start = 0
    for block in lams:
        q = block.shape[0]
        M[start:start + q, start:start + q] += block
        start += q
    sol = np.linalg.solve(M, T.T @ W @ y)
    mu = sol[0]
    u1 = dict(zip(cats1, sol[1:1 + len(cats1)]))
    u2 = dict(zip(cats2, sol[1 + len(cats1):]))
    return mu, u1, u2


def test_single_category_identical_rates():
    portfolio = make_portfolio([("01", 2.0, 3.0), ("01", 2.0, 5.0), ("01", 2.0, 1.0)])
    fit = fit_damage_rate_lmm(portfolio, by_level1)
    assert fit.intercept == pytest.approx(2.0, abs=1e-9)
    assert fit.effects["01"] == pytest.approx(0.0, abs=1e-9)


def test_two_symmetric_categories():
    portfolio = make_portfolio([("01", 1.0, 2.0), ("01", 3.0, 2.0),
                                ("02", 5.0, 2.0), ("02", 7.0, 2.0)])
    fit = fit_damage_rate_lmm(portfolio, by_level1)
    assert fit.effects["01"] == pytest.approx(-fit.effects["02"], abs=1e-9)
    assert fit.intercept == pytest.approx(4.0, abs=1e-8)


def test_blups_match_dense_oracle_fixed_components():
    rng = np.random.default_rng(41)
    for _ in range(8):
        n_cats = int(rng.integers(3, 7))
        cells = []
        g1 = []
        y = []
        w = []
        for c in range(n_cats):
            for _ in range(int(rng.integers(2, 6))):
                rate = float(rng.gamma(2.0, 1.0))
                weight = float(rng.uniform(0.5, 4.0))
                cells.append((f"{c + 1:02d}", rate, weight))
                g1.append(f"{c + 1:02d}")
                y.append(rate)
                w.append(weight)
        s1, se = float(rng.uniform(0.2, 2.0)), float(rng.uniform(0.2, 2.0))
        portfolio = make_portfolio(cells)
        fit = fit_damage_rate_lmm(portfolio, by_level1, fixed_variance=(s1, se))
        mu, u1, _ = dense_henderson_oracle(y, w, g1, s1, se)
        assert fit.intercept == pytest.approx(mu, abs=1e-8)
        for cat, effect in fit.effects.items():
            assert effect == pytest.approx(u1[cat], abs=1e-8)


def test_nested_blups_match_dense_oracle():
    rng = np.random.default_rng(17)
    g1, g2, y, w = [], [], [], []
    for parent in ("01", "02", "03"):
        for child in (parent + "01", parent + "02"):
            for _ in range(4):
                g1.append(parent)
                g2.append(child)
                y.append(float(rng.gamma(2.0, 1.0)))
                w.append(float(rng.uniform(0.5, 4.0)))
    records = []
    for i, (parent, child, rate, weight) in enumerate(zip(g1, g2, y, w)):
        records.append(PolicyRecord(company_id=f"c{i}", year=2000,
                                    path=CategoryPath((parent, child)),
                                    claim_amount=rate * weight,
                                    claim_count=1 if rate > 0 else 0,
                                    salary_mass=weight))
    roots = tuple(CategoryNode(p, f"p{p}", tuple(
        CategoryNode(p + c, f"l{p}{c}") for c in ("01", "02"))) for p in ("01", "02", "03"))
    hierarchy = HierarchySpec(level_names=("l1", "l2"), roots=roots)
    portfolio = Portfolio(records=tuple(records), hierarchy=hierarchy)

    s1, s2, se = 0.9, 0.4, 1.3
    fit = fit_damage_rate_lmm(portfolio, by_level1,
                              nested_grouping=lambda r: r.path.codes[1],
                              fixed_variance=(s1, s2, se))
    mu, u1, u2 = dense_henderson_oracle(y, w, g1, s1, se, g2=g2, s2=s2)
    assert fit.intercept == pytest.approx(mu, abs=1e-8)
    for cat, effect in fit.parent_effects.items():
        assert effect == pytest.approx(u1[cat], abs=1e-8)
    for cat, effect in fit.effects.items():
        assert effect == pytest.approx(u2[cat], abs=1e-8)


def test_nested_with_level2_variance_pinned_zero_equals_level1_fit():
    rng = np.random.default_rng(5)
    records = []
    for p, parent in enumerate(("01", "02", "03", "04")):
        for c, child in enumerate((f"{parent}01", f"{parent}02")):
            for i in range(5):
                rate = float(rng.gamma(2.0, 0.5 + 0.3 * p))
                weight = float(rng.uniform(1.0, 3.0))
                records.append(PolicyRecord(company_id=f"c{p}{c}{i}", year=2000,
                                            path=CategoryPath((parent, child)),
                                            claim_amount=rate * weight, claim_count=1,
                                            salary_mass=weight))
    hierarchy = HierarchySpec(level_names=("l1",), roots=tuple(
        CategoryNode(p, f"p{p}") for p in ("01", "02", "03", "04")))
    portfolio = Portfolio(records=tuple(records), hierarchy=hierarchy)

    level1 = fit_damage_rate_lmm(portfolio, by_level1)
    nested = fit_damage_rate_lmm(portfolio, by_level1,
                                 nested_grouping=lambda r: r.path.codes[1],
                                 fixed_variance=(None, 0.0, None))
    assert nested.intercept == pytest.approx(level1.intercept, abs=1e-8)
    for cat, effect in level1.effects.items():
        assert nested.parent_effects[cat] == pytest.approx(effect, abs=1e-8)
    assert all(v == 0.0 for v in nested.effects.values())


def test_shrinkage_monotone_in_weight():
    # category 01 deviates from the mean; more weight pulls its BLUP
    # toward the raw weighted deviation
    s1, se = 0.5, 1.0
    previous = 0.0
    for weight in (0.5, 2.0, 8.0, 32.0):
        portfolio = make_portfolio([("01", 3.0, weight), ("02", 1.0, 2.0)])
        fit = fit_damage_rate_lmm(portfolio, by_level1, fixed_variance=(s1, se))
        effect = fit.effects["01"]
        raw = 3.0 - fit.intercept
        assert 0 < previous < effect < raw or previous == 0.0
        previous = effect


def test_variance_extremes():
    portfolio = make_portfolio([("01", 1.0, 2.0), ("01", 2.0, 2.0),
                                ("02", 4.0, 2.0), ("02", 5.0, 2.0)])
    tiny = fit_damage_rate_lmm(portfolio, by_level1, fixed_variance=(1e-12, 1.0))
    assert all(abs(v) < 1e-9 for v in tiny.effects.values())
    huge = fit_damage_rate_lmm(portfolio, by_level1, fixed_variance=(1e12, 1.0))
    for cat, mean in (("01", 1.5), ("02", 4.5)):
        assert huge.effects[cat] == pytest.approx(mean - huge.intercept, abs=1e-6)


def test_variance_floor_flag_on_degenerate_data():
    portfolio = make_portfolio([("01", 2.0, 1.0), ("01", 2.0, 1.0),
                                ("02", 2.0, 1.0), ("02", 2.0, 1.0)])
    fit = fit_damage_rate_lmm(portfolio, by_level1)
    assert fit.variance_floored


def test_poisson_rate_one_gives_zero_intercept():
    portfolio = count_portfolio([("01", 3, 3.0), ("01", 2, 2.0)])
    fit = fit_frequency_poisson(portfolio, by_level1)
    assert fit.intercept == pytest.approx(0.0, abs=1e-6)
    assert fit.effects["01"] == pytest.approx(0.0, abs=1e-8)


def test_poisson_single_category_matches_analytic_mle():
    portfolio = count_portfolio([("01", 4, 3.0), ("01", 1, 2.0), ("01", 7, 9.0)])
    fit = fit_frequency_poisson(portfolio, by_level1)
    assert fit.intercept == pytest.approx(math.log(12 / 14), abs=1e-6)


def test_poisson_offset_identity():
    cells = [("01", 5, 2.0), ("01", 3, 4.0), ("02", 1, 3.0), ("02", 2, 2.0)]
    base = fit_frequency_poisson(count_portfolio(cells), by_level1)
    doubled = fit_frequency_poisson(count_portfolio(
        [(c, n, 2.0 * w) for c, n, w in cells]), by_level1)
    assert doubled.intercept == pytest.approx(base.intercept - math.log(2.0), abs=1e-6)
    for cat in base.effects:
        assert doubled.effects[cat] == pytest.approx(base.effects[cat], abs=1e-6)


def test_poisson_recovers_planted_ratios():
    rng = np.random.default_rng(99)
    base = 0.01
    cells = []
    for cat, ratio in zip(("01", "02", "03", "04"), (1, 2, 4, 8)):
        exposure = 1e5
        lam = base * ratio * exposure
        for _ in range(20):
            cells.append((cat, int(rng.poisson(lam / 20)), exposure / 20))
    fit = fit_frequency_poisson(count_portfolio(cells), by_level1)
    for a, b, ratio in (("02", "01", 2.0), ("03", "02", 2.0), ("04", "03", 2.0)):
        diff = fit.effects[a] - fit.effects[b]
        assert diff == pytest.approx(math.log(ratio), rel=0.05)


def test_poisson_all_zero_counts():
    portfolio = count_portfolio([("01", 0, 2.0), ("02", 0, 3.0)])
    fit = fit_frequency_poisson(portfolio, by_level1)
    assert fit.all_zero_counts
    assert fit.intercept == pytest.approx(math.log(0.5 / 5.0))
    assert all(v == 0.0 for v in fit.effects.values())


def test_feature_matrix_shape_and_projection():
    dr = make_fit({"01": 0.5, "02": -0.25, "03": 0.0})
    cf = make_fit({"01": 0.1, "02": 0.2, "03": -0.3})
    table = EmbeddingTable(dimension=4, vectors={
        "01": np.array([1.0, 0, 0, 0]), "02": np.array([0, 1.0, 0, 0]),
        "03": np.array([0, 0, 1.0, 0])})
    matrix = build_feature_matrix(dr, cf, table, ["01", "02", "03"])
    assert matrix.values.shape == (3, 6)
    assert matrix.row("02")[0] == -0.25 and matrix.row("02")[1] == 0.2
    permuted = build_feature_matrix(dr, cf, table, ["03", "01", "02"])
    assert np.allclose(permuted.row("02"), matrix.row("02"))
    assert permuted.keys == ("03", "01", "02")


def make_fit(effects):
    from hierrisk.effects import RandomEffectsFit
    return RandomEffectsFit(intercept=0.0, effects=effects,
                            variance_components=(1.0, 1.0),
                            converged=True, iterations=1)


def test_feature_matrix_missing_errors():
    dr = make_fit({"01": 0.5})
    cf = make_fit({"01": 0.1})
    table = EmbeddingTable(dimension=2, vectors={"01": np.array([1.0, 0.0])})
    with pytest.raises(MissingEffect):
        build_feature_matrix(dr, cf, table, ["01", "02"])
    dr2 = make_fit({"01": 0.5, "02": 1.0})
    cf2 = make_fit({"01": 0.1, "02": 0.2})
    with pytest.raises(MissingEmbedding):
        build_feature_matrix(dr2, cf2, table, ["01", "02"])
