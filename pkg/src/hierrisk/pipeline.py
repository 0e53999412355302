"""Top-down reduction of the hierarchy: cluster similar categories level by
level while preserving parent-child nesting.

Level 1 clusters all categories at once; deeper levels loop over the grouped
parents and cluster each child set separately, after re-fitting the random
effects with the parent grouping fixed. Every (encoder, K) grid cell is
scored with an internal validation index; mass constraints are enforced by
merging neighbouring (consecutively coded) categories.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .clustering import LINKAGES, ClusterAssignment, hca, kmeans, kmedoids, spectral
from .core import HierarchySpec, Portfolio, code_order, format_number
from .effects import (
    FeatureMatrix,
    build_feature_matrix,
    fit_damage_rate_lmm,
    fit_frequency_poisson,
)
from .embeddings import EmbeddingTable
from .errors import ConfigError, DataError, HierriskError, KOutOfRange, KTooLarge, ZeroVector
from .indices import DIRECTIONS, IndexValue, calinski_harabasz, davies_bouldin, dunn, silhouette
from .proximity import pairwise

ALGORITHMS = ("kmeans", "kmedoids", "spectral", "hca")
VARIANTS = ("full_angular", "risk_euclidean")


@dataclass(frozen=True)
class LevelGrid:
    """Cluster-count candidates and encoder variants searched at one level."""

    level: int
    k_candidates: tuple[int, ...]
    encoders: tuple[str, ...]

    def __post_init__(self):
        if not self.k_candidates or any(k < 1 for k in self.k_candidates):
            raise ConfigError("k candidates must be a non-empty list of integers >= 1")
        if not self.encoders:
            raise ConfigError("at least one encoder is required")


@dataclass(frozen=True)
class MassConstraint:
    min_mass: float

    def __post_init__(self):
        if self.min_mass <= 0:
            raise ConfigError("min_mass must be > 0")


@dataclass(frozen=True)
class GridCell:
    """One evaluated (encoder, K) combination in a level's search grid."""

    level: int
    parent: str
    encoder: str
    k: int
    index_name: str
    index_value: float
    degenerate: bool
    chosen: bool = False


@dataclass(frozen=True)
class ClusteringSolution:
    """Per-level mapping original category -> grouped id.

    Level-1 ids are "1".."J'"; level-2 ids are "<parent id>.<child cluster>",
    so nesting is explicit in the id itself.
    """

    level_maps: tuple[dict[str, str], ...]
    metadata: dict = field(default_factory=dict)
    grid_log: tuple[GridCell, ...] = ()

    def group_of(self, level: int, code: str) -> str:
        return self.level_maps[level][code]

    def grouped_count(self, level: int) -> int:
        return len(set(self.level_maps[level].values()))

    def total_grouped(self) -> int:
        return sum(self.grouped_count(level) for level in range(len(self.level_maps)))


def check_nesting(solution: ClusteringSolution, hierarchy: HierarchySpec) -> bool:
    """Every child's grouped parent must equal the group of its parent."""
    if len(solution.level_maps) < 2:
        return True
    for node in hierarchy.nodes_at_level(0):
        for child in node.children:
            child_group = solution.group_of(1, child.code)
            if child_group.split(".")[0] != solution.group_of(0, node.code):
                return False
    return True


# --- mass handling ------------------------------------------------------------


def merge_consecutive(codes: Sequence[str], masses: dict[str, float],
                      min_mass: float) -> list[tuple[str, ...]]:
    """Greedy left-to-right blocks of consecutively coded categories, each with
    mass >= min_mass; a deficient trailing block is folded into its predecessor."""
    ordered = sorted(codes, key=code_order)
    blocks: list[list[str]] = []
    current: list[str] = []
    total = 0.0
    for code in ordered:
        current.append(code)
        total += masses.get(code, 0.0)
        if total >= min_mass:
            blocks.append(current)
            current = []
            total = 0.0
    if current:
        if blocks:
            blocks[-1].extend(current)
        else:
            blocks.append(current)
    return [tuple(b) for b in blocks]


def enforce_mass_constraint(groups: Sequence[Sequence[str]], masses: dict[str, float],
                            min_mass: float) -> tuple[list[tuple[str, ...]], bool]:
    """Merge deficient groups with their nearest neighbour in representative
    code order until all have mass >= min_mass (or one group remains).

    The lightest deficient group merges first; "nearest" compares the numeric
    codes of the group representatives (smallest member code), with ties going
    to the lower-coded side. Returns (groups, all_satisfied).
    """
    merged = sorted((sorted(g, key=code_order) for g in groups),
                    key=lambda g: code_order(g[0]))
    while True:
        totals = [sum(masses.get(c, 0.0) for c in g) for g in merged]
        deficient = [i for i, t in enumerate(totals) if t < min_mass]
        if not deficient:
            return [tuple(g) for g in merged], True
        if len(merged) == 1:
            return [tuple(merged[0])], False
        lightest = min(deficient, key=lambda i: (totals[i], code_order(merged[i][0])))
        reps = [code_order(g[0]) for g in merged]
        neighbours = [i for i in (lightest - 1, lightest + 1) if 0 <= i < len(merged)]
        target = min(neighbours,
                     key=lambda i: (abs(reps[i] - reps[lightest]), reps[i]))
        a, b = sorted((lightest, target))
        merged[a] = sorted(merged[a] + merged[b], key=code_order)
        del merged[b]


# --- grid search ----------------------------------------------------------------


def _cell_seed(master: int, level: int, parent: str, encoder_idx: int, k: int) -> int:
    parent_num = int(parent) if parent else 0
    seq = np.random.SeedSequence([int(master), level, parent_num, encoder_idx, k])
    return int(seq.generate_state(1)[0])


def _cluster_rows(algorithm: str, fm: FeatureMatrix, k: int, seed: int, *,
                  linkage: str, kmeans_restarts: int, spectral_restarts: int,
                  cache: dict) -> ClusterAssignment:
    """Run the configured algorithm on the full feature rows.

    k-medoids and hca consume the angular distance matrix, spectral the
    angular similarity with a zero diagonal, k-means the raw rows."""
    if algorithm == "kmeans":
        return kmeans(fm.values, k, seed=seed, restarts=kmeans_restarts, keys=fm.keys)
    if algorithm == "kmedoids":
        if "dist" not in cache:
            cache["dist"] = pairwise(fm.values, "angular_distance", keys=fm.keys)
        return kmedoids(cache["dist"], k, seed=seed)
    if algorithm == "spectral":
        if "sim" not in cache:
            cache["sim"] = pairwise(fm.values, "angular_similarity",
                                    keys=fm.keys, zero_diagonal=True)
        return spectral(cache["sim"], k, seed=seed, kmeans_restarts=spectral_restarts)
    if algorithm == "hca":
        if "dist" not in cache:
            cache["dist"] = pairwise(fm.values, "angular_distance", keys=fm.keys)
        return hca(cache["dist"], k, linkage=linkage)
    raise ConfigError(f"unknown algorithm {algorithm!r}")


def _score_cell(index_name: str, variant: str, fm: FeatureMatrix,
                assignment: ClusterAssignment, cache: dict) -> IndexValue:
    """Index value of one cell under the evaluation variant.

    The variant controls both the feature rows (full vector vs risk-only) and
    the distance (angular vs squared Euclidean); CH is Euclidean by definition
    and only switches rows."""
    if variant == "full_angular":
        rows, metric_name = fm.values, "angular_distance"
    elif variant == "risk_euclidean":
        rows, metric_name = fm.risk_rows(), "squared_euclidean"
    else:
        raise ConfigError(f"unknown variant {variant!r}")
    direction = DIRECTIONS[index_name]
    try:
        if index_name == "calinski_harabasz":
            return calinski_harabasz(rows, assignment)
        if index_name == "davies_bouldin":
            return davies_bouldin(rows, assignment, metric_name)
        key = ("index_matrix", variant)
        if key not in cache:
            cache[key] = pairwise(rows, metric_name, keys=fm.keys)
        if index_name == "dunn":
            return dunn(cache[key], assignment)
        if index_name == "silhouette":
            return silhouette(cache[key], assignment)
    except (KOutOfRange, ZeroVector):
        worst = -np.inf if direction == "maximize" else np.inf
        return IndexValue(index_name, worst, direction, degenerate=True)
    raise ConfigError(f"unknown index {index_name!r}")


def _effective_score(cell_value: IndexValue, k: int, n_scope: int) -> float:
    """Comparable score (higher wins). Degenerate cells keep an infinite value
    only when it signals perfectly compact clusters below the trivial K = J
    partition; otherwise they rank below everything."""
    direction = cell_value.direction
    value = cell_value.value if direction == "maximize" else -cell_value.value
    if cell_value.degenerate:
        if value == np.inf and k < n_scope:
            return np.inf
        return -np.inf
    return value


def grid_search_level(feature_matrices: dict[str, FeatureMatrix], algorithm: str,
                      index_name: str, variant: str, k_candidates: Sequence[int],
                      seed: int, *, level: int = 1, parent: str = "",
                      linkage: str = "complete", kmeans_restarts: int = 10,
                      spectral_restarts: int = 100):
    """Evaluate every (encoder, K) cell; pick the best by index direction.

    Ties prefer non-degenerate cells, then the smaller K, then encoder order.
    Returns (encoder, K, assignment, cells); if every cell was degenerate the
    smallest-K cell of the first encoder is returned, flagged.
    """
    encoders = list(feature_matrices)
    n_scope = len(next(iter(feature_matrices.values())).keys)
    candidates = [k for k in k_candidates if k <= n_scope]
    truncated = len(candidates) < len(k_candidates)
    if not candidates:
        candidates = [n_scope]
        truncated = True

    cells = []
    best = None  # (score, not_degenerate, -k, -encoder_idx) lexicographic max
    chosen = None
    first_error = None
    for encoder_idx, encoder in enumerate(encoders):
        fm = feature_matrices[encoder]
        cache: dict = {}
        for k in sorted(candidates):
            cell_seed = _cell_seed(seed, level, parent, encoder_idx, k)
            try:
                assignment = _cluster_rows(algorithm, fm, k, cell_seed,
                                           linkage=linkage,
                                           kmeans_restarts=kmeans_restarts,
                                           spectral_restarts=spectral_restarts,
                                           cache=cache)
            except KTooLarge as exc:
                # K can exceed the distinct rows of one encoder's features;
                # the cell is infeasible, not the whole search
                first_error = first_error or exc
                cells.append(GridCell(level=level, parent=parent, encoder=encoder,
                                      k=k, index_name=index_name,
                                      index_value=float("nan"), degenerate=True))
                continue
            value = _score_cell(index_name, variant, fm, assignment, cache)
            score = (_effective_score(value, k, n_scope), not value.degenerate,
                     -k, -encoder_idx)
            cells.append(GridCell(level=level, parent=parent, encoder=encoder,
                                  k=k, index_name=index_name,
                                  index_value=float(value.value),
                                  degenerate=value.degenerate))
            if best is None or score > best:
                best = score
                chosen = (encoder, k, assignment, len(cells) - 1)
    if chosen is None:
        raise first_error
    encoder, k, assignment, cell_pos = chosen
    cells[cell_pos] = replace(cells[cell_pos], chosen=True)
    all_degenerate = all(c.degenerate for c in cells)
    return encoder, k, assignment, cells, {"truncated": truncated,
                                           "all_cells_degenerate": all_degenerate}


# --- driver ----------------------------------------------------------------------


def _train_masses(portfolio: Portfolio, level: int) -> dict[str, float]:
    masses: dict[str, float] = {}
    for record in portfolio.train_records():
        code = record.path.codes[level]
        masses[code] = masses.get(code, 0.0) + record.salary_mass
    return masses


def _groups_to_map(groups: Sequence[Sequence[str]]) -> dict[str, str]:
    """Number groups by representative code order; map member code -> id."""
    ordered = sorted(groups, key=lambda g: min(code_order(c) for c in g))
    mapping = {}
    for gid, members in enumerate(ordered, start=1):
        for code in members:
            mapping[code] = str(gid)
    return mapping


def reduce_hierarchy(portfolio: Portfolio, embeddings: dict[str, EmbeddingTable], *,
                     algorithm: str, index_name: str, variant: str,
                     grids: Sequence[LevelGrid], min_mass: float, seed: int,
                     linkage: str = "complete", kmeans_restarts: int = 10,
                     spectral_restarts: int = 100) -> ClusteringSolution:
    """Run the full top-down reduction on the training split.

    Level 1: fit the damage-rate LMM and frequency PQL on the original
    categories, grid-search (encoder x K), cluster, then merge neighbouring
    clusters until every group carries ``min_mass``. Level 2: pre-merge
    consecutive child codes per grouped parent to reach ``min_mass``, refit
    the nested models with the level-1 groups fixed, and cluster each
    parent's children with its own grid. A level that collapses onto the one
    above is reported in the metadata.
    """
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {algorithm!r}")
    if variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}, got {variant!r}")
    if index_name not in DIRECTIONS:
        raise ConfigError(f"index must be one of {tuple(DIRECTIONS)}, got {index_name!r}")
    if linkage not in LINKAGES:
        raise ConfigError(f"linkage must be one of {LINKAGES}, got {linkage!r}")
    hierarchy = portfolio.hierarchy
    levels = hierarchy.level_count
    if levels > 2:
        raise ConfigError("reduction supports hierarchies of one or two levels")
    grid_by_level = {g.level: g for g in grids}
    for level in range(1, levels + 1):
        if level not in grid_by_level:
            raise ConfigError(f"no grid configured for level {level}")
    train = portfolio.train()
    notes: list[str] = []
    log: list[GridCell] = []
    metadata = {"algorithm": algorithm, "index": index_name, "variant": variant,
                "linkage": linkage, "seed": seed, "min_mass": min_mass,
                "chosen": {}, "notes": notes}

    # ---- level 1
    grid1 = grid_by_level[1]
    cats1 = hierarchy.codes_at_level(0)
    masses1 = _train_masses(portfolio, 0)
    by_cat1 = lambda r: r.path.codes[0]
    dr1 = fit_damage_rate_lmm(train, by_cat1)
    cf1 = fit_frequency_poisson(train, by_cat1)
    for flag, name in ((dr1.variance_floored, "damage variance floored"),
                       (not dr1.converged, "damage fit not converged"),
                       (cf1.all_zero_counts, "frequency fit saw no claims"),
                       (not cf1.converged, "frequency fit not converged")):
        if flag:
            notes.append(f"level 1: {name}")
    unseen = [c for c in cats1 if c not in dr1.effects]
    if unseen:
        # a category with no training records has a fully shrunk effect of 0,
        # so it can still be clustered on its embedding
        notes.append(f"level 1: no training records for {', '.join(unseen)}; "
                     "zero effects assumed")
        dr1 = replace(dr1, effects={**dr1.effects, **{c: 0.0 for c in unseen}})
        cf1 = replace(cf1, effects={**cf1.effects, **{c: 0.0 for c in unseen}})
    matrices1 = {}
    for encoder in grid1.encoders:
        if encoder not in embeddings:
            raise ConfigError(f"no embedding table for encoder {encoder!r}")
        matrices1[encoder] = build_feature_matrix(dr1, cf1, embeddings[encoder], cats1)

    if len(cats1) == 1:
        assignment1 = ClusterAssignment(labels={cats1[0]: 1}, K=1, objective=0.0)
        level1_groups = [tuple(cats1)]
        metadata["chosen"]["level1"] = {"encoder": grid1.encoders[0], "k": 1}
    else:
        try:
            encoder1, k1, assignment1, cells, flags = grid_search_level(
                matrices1, algorithm, index_name, variant, grid1.k_candidates, seed,
                level=1, parent="", linkage=linkage, kmeans_restarts=kmeans_restarts,
                spectral_restarts=spectral_restarts)
        except HierriskError as exc:
            raise type(exc)(f"level 1: {exc}") from exc
        log.extend(cells)
        if flags["truncated"]:
            notes.append("level 1: grid truncated to the available categories")
        if flags["all_cells_degenerate"]:
            notes.append("level 1: all grid cells degenerate; smallest K kept")
        metadata["chosen"]["level1"] = {"encoder": encoder1, "k": k1}
        level1_groups = [tuple(members) for members in assignment1.groups().values()]
    merged1, satisfied = enforce_mass_constraint(level1_groups, masses1, min_mass)
    if not satisfied:
        notes.append("level 1: total mass below min_mass; single group kept")
    map1 = _groups_to_map(merged1)
    level_maps = [map1]

    # ---- level 2
    if levels == 2:
        grid2 = grid_by_level[2]
        masses2 = _train_masses(portfolio, 1)
        parent_of = {child.code: node.code for node in hierarchy.nodes_at_level(0)
                     for child in node.children}
        children_of_group: dict[str, list[str]] = {}
        for child, parent in parent_of.items():
            children_of_group.setdefault(map1[parent], []).append(child)

        block_of_child: dict[str, str] = {}
        blocks_by_group: dict[str, list[tuple[str, ...]]] = {}
        for gid in sorted(children_of_group, key=int):
            blocks = merge_consecutive(children_of_group[gid], masses2, min_mass)
            blocks_by_group[gid] = blocks
            for block in blocks:
                for code in block:
                    block_of_child[code] = f"b{block[0]}"
            if any(len(b) > 1 for b in blocks):
                notes.append(f"level 2 parent {gid}: consecutive categories pre-merged")

        group1_of_record = lambda r: map1[r.path.codes[0]]
        block_of_record = lambda r: block_of_child[r.path.codes[1]]
        dr2 = fit_damage_rate_lmm(train, group1_of_record, block_of_record)
        cf2 = fit_frequency_poisson(train, group1_of_record, block_of_record)
        if dr2.variance_floored:
            notes.append("level 2: damage variance floored")
        if cf2.all_zero_counts:
            notes.append("level 2: frequency fit saw no claims")

        map2: dict[str, str] = {}
        collapse = True
        for gid in sorted(blocks_by_group, key=int):
            blocks = blocks_by_group[gid]
            block_keys = [f"b{block[0]}" for block in blocks]
            if len(blocks) == 1:
                chosen_assignment = ClusterAssignment(labels={block_keys[0]: 1},
                                                      K=1, objective=0.0)
                metadata["chosen"][f"level2_parent{gid}"] = {
                    "encoder": grid2.encoders[0], "k": 1}
            else:
                matrices2 = {}
                for encoder in grid2.encoders:
                    table = embeddings[encoder]
                    block_vectors = {key: np.mean([table.get(c) for c in block], axis=0)
                                     for key, block in zip(block_keys, blocks)}
                    block_table = EmbeddingTable(dimension=table.dimension,
                                                 vectors=block_vectors,
                                                 encoder_name=table.encoder_name)
                    matrices2[encoder] = build_feature_matrix(dr2, cf2, block_table,
                                                              block_keys)
                try:
                    encoder2, k2, chosen_assignment, cells, flags = grid_search_level(
                        matrices2, algorithm, index_name, variant, grid2.k_candidates,
                        seed, level=2, parent=gid, linkage=linkage,
                        kmeans_restarts=kmeans_restarts,
                        spectral_restarts=spectral_restarts)
                except HierriskError as exc:
                    raise type(exc)(f"level 2 parent {gid}: {exc}") from exc
                log.extend(cells)
                if flags["truncated"]:
                    notes.append(f"level 2 parent {gid}: grid truncated")
                if flags["all_cells_degenerate"]:
                    notes.append(f"level 2 parent {gid}: all grid cells degenerate")
                metadata["chosen"][f"level2_parent{gid}"] = {"encoder": encoder2,
                                                             "k": k2}
            if chosen_assignment.K > 1:
                collapse = False
            for key, block in zip(block_keys, blocks):
                for code in block:
                    map2[code] = f"{gid}.{chosen_assignment.labels[key]}"
        if collapse:
            metadata["level_dropped"] = 2
            notes.append("level 2 collapsed onto level 1 and can be dropped")
        level_maps.append(map2)

    solution = ClusteringSolution(level_maps=tuple(level_maps), metadata=metadata,
                                  grid_log=tuple(log))
    if not check_nesting(solution, hierarchy):
        raise DataError("internal error: nesting invariant violated")
    return solution


# --- persistence -------------------------------------------------------------------


def write_solution(solution: ClusteringSolution, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["level", "original_code", "grouped_id"])
        for level, mapping in enumerate(solution.level_maps, start=1):
            for code in sorted(mapping, key=code_order):
                writer.writerow([level, code, mapping[code]])


def load_solution(path) -> ClusteringSolution:
    maps: dict[int, dict[str, str]] = {}
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        if header != ["level", "original_code", "grouped_id"]:
            raise DataError(f"unexpected solution header {header}")
        for level_str, code, gid in reader:
            maps.setdefault(int(level_str), {})[code] = gid
    if not maps or sorted(maps) != list(range(1, len(maps) + 1)):
        raise DataError("solution file has missing or non-contiguous levels")
    return ClusteringSolution(level_maps=tuple(maps[l] for l in sorted(maps)))


def write_grid_log(solution: ClusteringSolution, path) -> None:
    """Grid log rows; degenerate cells are visible through their nan/inf value."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["level", "parent", "encoder", "k", "index_name",
                         "index_value", "chosen"])
        for cell in solution.grid_log:
            writer.writerow([cell.level, cell.parent, cell.encoder, cell.k,
                             cell.index_name, format_number(cell.index_value),
                             int(cell.chosen)])
