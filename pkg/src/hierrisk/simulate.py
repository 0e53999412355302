"""Synthetic hierarchical portfolios with planted group structure.

Categories within a true group share the same damage-rate and frequency
effects; embeddings are drawn around one prototype per true group. The
planted grouping is returned so clustering quality can be scored without
any confidential data.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from math import comb

import numpy as np

from .core import (
    CategoryNode,
    CategoryPath,
    HierarchySpec,
    PolicyRecord,
    Portfolio,
    write_hierarchy,
    write_portfolio,
)
from .embeddings import EmbeddingTable, write_embedding_table


@dataclass(frozen=True)
class GeneratorSpec:
    """Knobs of the planted-structure generator (defaults give a 4x3 design)."""

    seed: int = 2024
    level1_groups: int = 4
    categories_per_group: int = 3
    child_groups_per_parent: int = 3
    children_per_child_group: int = 2
    damage_effect_sigma: float = 0.8
    frequency_effect_sigma: float = 0.7
    child_damage_sigma: float = 0.5
    child_frequency_sigma: float = 0.45
    companies_per_category: int = 14
    years: int = 8
    split_year: int = 7
    mass_log_mean: float = 2.3
    mass_log_sigma: float = 0.4
    base_frequency: float = 0.06
    severity_scale: float = 2.0
    embedding_dim: int = 8
    encoder_noise: tuple[float, ...] = (0.12, 0.3)

    def __post_init__(self):
        counts = (self.level1_groups, self.categories_per_group,
                  self.child_groups_per_parent, self.children_per_child_group,
                  self.companies_per_category, self.years, self.embedding_dim)
        if any(c < 1 for c in counts):
            raise ValueError("all counts must be >= 1")
        if min(self.damage_effect_sigma, self.frequency_effect_sigma,
               self.child_damage_sigma, self.child_frequency_sigma) < 0:
            raise ValueError("effect scales must be >= 0")


@dataclass(frozen=True)
class SyntheticData:
    portfolio: Portfolio
    embeddings: dict[str, EmbeddingTable]
    truth_level1: dict[str, str]          # level-1 code -> true group label
    truth_level2: dict[str, str]          # level-2 code -> true leaf-class label
    planted_rate: dict[str, float]        # level-2 code -> E[damage rate]
    planted_effects: dict[str, tuple[float, float]]  # code -> (damage, frequency)


_WORDS = ("arbor", "basalt", "cobalt", "dynamo", "ember", "fathom", "granite",
          "harbor", "iris", "juniper", "krypton", "lumen", "marble", "nectar",
          "onyx", "pylon", "quartz", "russet", "sable", "tundra")


def generate(spec: GeneratorSpec) -> SyntheticData:
    """Draw a portfolio, per-encoder embedding tables and the ground truth."""
    rng = np.random.default_rng(spec.seed)
    n_cats1 = spec.level1_groups * spec.categories_per_group
    children_per_cat = spec.child_groups_per_parent * spec.children_per_child_group

    # planted effects per true group / true leaf class
    u1d = rng.normal(0.0, spec.damage_effect_sigma, size=spec.level1_groups)
    u1f = rng.normal(0.0, spec.frequency_effect_sigma, size=spec.level1_groups)
    u2d = rng.normal(0.0, spec.child_damage_sigma,
                     size=(spec.level1_groups, spec.child_groups_per_parent))
    u2f = rng.normal(0.0, spec.child_frequency_sigma,
                     size=(spec.level1_groups, spec.child_groups_per_parent))

    proto1 = rng.normal(size=(spec.level1_groups, spec.embedding_dim))
    proto2 = rng.normal(size=(spec.level1_groups, spec.child_groups_per_parent,
                              spec.embedding_dim))

    # membership is interleaved so that "similar" categories are not simply
    # the consecutively coded ones
    group_of_cat = [i % spec.level1_groups for i in range(n_cats1)]
    child_group_of = [k % spec.child_groups_per_parent for k in range(children_per_cat)]

    truth_level1: dict[str, str] = {}
    truth_level2: dict[str, str] = {}
    planted_rate: dict[str, float] = {}
    roots = []
    leaf_effects = {}
    for j in range(n_cats1):
        code1 = f"{j + 1:02d}"
        g = group_of_cat[j]
        truth_level1[code1] = f"g{g + 1}"
        children = []
        for k in range(children_per_cat):
            code2 = f"{code1}{k + 1:02d}"
            h = child_group_of[k]
            truth_level2[code2] = f"g{g + 1}.h{h + 1}"
            leaf_effects[code2] = (u1d[g] + u2d[g, h], u1f[g] + u2f[g, h])
            planted_rate[code2] = (spec.base_frequency * 2.0 * spec.severity_scale
                                   * float(np.exp(u1f[g] + u2f[g, h] + u1d[g] + u2d[g, h])))
            label = f"{_WORDS[g % len(_WORDS)]} {_WORDS[(g * 3 + h + 5) % len(_WORDS)]} unit {k + 1}"
            children.append(CategoryNode(code2, label))
        label1 = f"{_WORDS[g % len(_WORDS)]} sector {j + 1}"
        roots.append(CategoryNode(code1, label1, tuple(children)))
    hierarchy = HierarchySpec(level_names=("level1", "level2"), roots=tuple(roots))

    records = []
    for j in range(n_cats1):
        code1 = f"{j + 1:02d}"
        for k in range(children_per_cat):
            code2 = f"{code1}{k + 1:02d}"
            effect_d, effect_f = leaf_effects[code2]
            for i in range(spec.companies_per_category):
                company = f"c{code2}_{i:03d}"
                for year in range(1, spec.years + 1):
                    mass = float(rng.lognormal(spec.mass_log_mean, spec.mass_log_sigma))
                    lam = mass * spec.base_frequency * float(np.exp(effect_f))
                    count = int(rng.poisson(lam))
                    amount = 0.0
                    if count > 0:
                        amount = float(rng.gamma(2.0 * count, spec.severity_scale)
                                       * np.exp(effect_d))
                    records.append(PolicyRecord(company_id=company, year=year,
                                                path=CategoryPath((code1, code2)),
                                                claim_amount=amount,
                                                claim_count=count,
                                                salary_mass=mass))
    records.sort(key=lambda r: (r.company_id, r.year))
    portfolio = Portfolio(records=tuple(records), hierarchy=hierarchy,
                          split_year=spec.split_year)

    tables = {}
    for e, noise in enumerate(spec.encoder_noise):
        name = f"enc_{chr(ord('a') + e)}"
        vectors = {}
        for j in range(n_cats1):
            code1 = f"{j + 1:02d}"
            g = group_of_cat[j]
            vectors[code1] = proto1[g] + noise * rng.normal(size=spec.embedding_dim)
            for k in range(children_per_cat):
                code2 = f"{code1}{k + 1:02d}"
                h = child_group_of[k]
                vectors[code2] = proto2[g, h] + noise * rng.normal(size=spec.embedding_dim)
        tables[name] = EmbeddingTable(dimension=spec.embedding_dim, vectors=vectors,
                                      encoder_name=name)

    return SyntheticData(portfolio=portfolio, embeddings=tables,
                         truth_level1=truth_level1, truth_level2=truth_level2,
                         planted_rate=planted_rate, planted_effects=leaf_effects)


def write_synthetic(data: SyntheticData, outdir) -> dict[str, str]:
    """Write portfolio, hierarchy, embedding and truth files; returns the paths."""
    import os

    os.makedirs(outdir, exist_ok=True)
    paths = {"portfolio": os.path.join(outdir, "portfolio.csv"),
             "hierarchy": os.path.join(outdir, "hierarchy.csv"),
             "truth": os.path.join(outdir, "truth.csv")}
    write_portfolio(data.portfolio, paths["portfolio"])
    write_hierarchy(data.portfolio.hierarchy, paths["hierarchy"])
    for name, table in data.embeddings.items():
        paths[f"embeddings.{name}"] = os.path.join(outdir, f"embeddings_{name}.csv")
        write_embedding_table(table, paths[f"embeddings.{name}"])
    with open(paths["truth"], "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["level", "code", "true_group"])
        for code in sorted(data.truth_level1):
            writer.writerow([1, code, data.truth_level1[code]])
        for code in sorted(data.truth_level2):
            writer.writerow([2, code, data.truth_level2[code]])
    return paths


def adjusted_rand_index(labels_a: dict[str, str], labels_b: dict[str, str]) -> float:
    """ARI between two labelings of the same keys."""
    keys = sorted(labels_a)
    if sorted(labels_b) != keys:
        raise ValueError("labelings cover different key sets")
    a_ids = {v: i for i, v in enumerate(dict.fromkeys(labels_a[k] for k in keys))}
    b_ids = {v: i for i, v in enumerate(dict.fromkeys(labels_b[k] for k in keys))}
    table = np.zeros((len(a_ids), len(b_ids)), dtype=int)
    for k in keys:
        table[a_ids[labels_a[k]], b_ids[labels_b[k]]] += 1
    n = len(keys)
    sum_cells = sum(comb(int(v), 2) for v in table.flat)
    sum_rows = sum(comb(int(v), 2) for v in table.sum(axis=1))
    sum_cols = sum(comb(int(v), 2) for v in table.sum(axis=0))
    expected = sum_rows * sum_cols / comb(n, 2)
    maximum = (sum_rows + sum_cols) / 2.0
    if maximum == expected:
        return 1.0
    return (sum_cells - expected) / (maximum - expected)
