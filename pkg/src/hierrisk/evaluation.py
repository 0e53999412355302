"""Predictive evaluation of a reduced risk factor.

Fits the reduced-factor weighted LMM, calibrates the intercept so the train
loss ratio is exactly one (the balance property made explicit), and reports
a mass-weighted concentration Gini index plus the test loss ratio. Also
provides the non-data-driven benchmark (consecutive-code merging only) and
per-category reporting statistics.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .core import Portfolio, damage_rate, format_number
from .effects import RandomEffectsFit, fit_damage_rate_lmm
from .errors import DataError, ZeroFitted
from .pipeline import ClusteringSolution, merge_consecutive, _groups_to_map, _train_masses


@dataclass(frozen=True)
class EvaluationReport:
    """Table-style summary for one clustering solution."""

    gini_train: float
    gini_test: Optional[float]
    loss_ratio_test: Optional[float]
    J_prime: int
    sum_K_prime: Optional[int]
    calibrated: bool


def fit_evaluation_model(portfolio_train: Portfolio,
                         solution: ClusteringSolution) -> RandomEffectsFit:
    """Weighted LMM on the grouped categories (nested when the solution has
    two levels)."""
    group1 = lambda r: solution.group_of(0, r.path.codes[0])
    if len(solution.level_maps) >= 2:
        group2 = lambda r: solution.group_of(1, r.path.codes[1])
        return fit_damage_rate_lmm(portfolio_train, group1, group2)
    return fit_damage_rate_lmm(portfolio_train, group1)


def predict_damage_rates(fit: RandomEffectsFit, solution: ClusteringSolution,
                         records) -> np.ndarray:
    """mu + outer effect + child effect per record; groups unseen in training
    fall back to a zero effect (fully shrunk to the mean)."""
    nested = len(solution.level_maps) >= 2
    out = np.empty(len(records))
    for i, record in enumerate(records):
        g1 = solution.group_of(0, record.path.codes[0])
        value = fit.intercept
        if nested:
            value += (fit.parent_effects or {}).get(g1, 0.0)
            g2 = solution.group_of(1, record.path.codes[1])
            value += fit.effects.get(g2, 0.0)
        else:
            value += fit.effects.get(g1, 0.0)
        out[i] = value
    return out


def calibrate_intercept(fit: RandomEffectsFit, portfolio_train: Portfolio,
                        solution: ClusteringSolution) -> RandomEffectsFit:
    """Shift the intercept so that total fitted claims equal total observed
    claims on the training data (train loss ratio exactly one)."""
    records = portfolio_train.records
    masses = np.array([r.salary_mass for r in records])
    actual = sum(r.claim_amount for r in records)
    fitted = float(predict_damage_rates(fit, solution, records) @ masses)
    shift = (actual - fitted) / float(masses.sum())
    return replace(fit, intercept=fit.intercept + shift, calibrated=True)


def gini_index(predictions, actuals, masses) -> float:
    """Mass-weighted concentration Gini of actual claims against the ranking
    induced by the predictions.

    Records are sorted by predicted rate (ascending, stable); records with
    equal predictions are pooled so the Lorenz curve is flat-segment-free and
    constant predictions score exactly zero. Gini = 1 - 2 * area under the
    curve of cumulative claim share against cumulative mass share.
    """
    predictions = np.asarray(predictions, dtype=float)
    actuals = np.asarray(actuals, dtype=float)
    masses = np.asarray(masses, dtype=float)
    if not (len(predictions) == len(actuals) == len(masses)):
        raise DataError("prediction, actual and mass vectors must align")
    total_claims = actuals.sum()
    total_mass = masses.sum()
    if total_claims == 0.0:
        warnings.warn("no claims at all; Gini reported as 0", RuntimeWarning)
        return 0.0
    order = np.argsort(predictions, kind="stable")
    area = 0.0
    cum_mass = 0.0
    cum_claims = 0.0
    i = 0
    while i < len(order):
        j = i
        block_mass = 0.0
        block_claims = 0.0
        while j < len(order) and predictions[order[j]] == predictions[order[i]]:
            block_mass += masses[order[j]]
            block_claims += actuals[order[j]]
            j += 1
        x0, y0 = cum_mass / total_mass, cum_claims / total_claims
        cum_mass += block_mass
        cum_claims += block_claims
        x1, y1 = cum_mass / total_mass, cum_claims / total_claims
        area += (x1 - x0) * (y0 + y1) / 2.0
        i = j
    return float(1.0 - 2.0 * area)


def loss_ratio(predictions, actuals, masses) -> float:
    """Total actual capped claims over total fitted claims."""
    predictions = np.asarray(predictions, dtype=float)
    actuals = np.asarray(actuals, dtype=float)
    masses = np.asarray(masses, dtype=float)
    fitted = float(predictions @ masses)
    if fitted <= 0.0:
        raise ZeroFitted(f"total fitted claims must be > 0, got {fitted}")
    return float(actuals.sum()) / fitted


def build_benchmark(portfolio: Portfolio, min_mass: float) -> ClusteringSolution:
    """Consecutive-code merging until the salary mass suffices, at level 1 and
    then within each merged level-1 category. No clustering involved."""
    hierarchy = portfolio.hierarchy
    masses1 = _train_masses(portfolio, 0)
    cats1 = hierarchy.codes_at_level(0)
    groups1 = merge_consecutive(cats1, masses1, min_mass)
    map1 = _groups_to_map(groups1)
    level_maps = [map1]
    if hierarchy.level_count >= 2:
        masses2 = _train_masses(portfolio, 1)
        children_of_group: dict[str, list[str]] = {}
        for node in hierarchy.nodes_at_level(0):
            for child in node.children:
                children_of_group.setdefault(map1[node.code], []).append(child.code)
        map2: dict[str, str] = {}
        for gid in sorted(children_of_group, key=int):
            blocks = merge_consecutive(children_of_group[gid], masses2, min_mass)
            for k, block in enumerate(blocks, start=1):
                for code in block:
                    map2[code] = f"{gid}.{k}"
        level_maps.append(map2)
    return ClusteringSolution(level_maps=tuple(level_maps),
                              metadata={"algorithm": "benchmark",
                                        "min_mass": min_mass})


def evaluate_solution(portfolio: Portfolio,
                      solution: ClusteringSolution) -> EvaluationReport:
    """Fit, calibrate, and score one solution on the train/test split."""
    train = portfolio.train()
    fit = fit_evaluation_model(train, solution)
    fit = calibrate_intercept(fit, train, solution)

    def score(records):
        predictions = predict_damage_rates(fit, solution, records)
        actuals = np.array([r.claim_amount for r in records])
        masses = np.array([r.salary_mass for r in records])
        return predictions, actuals, masses

    predictions, actuals, masses = score(train.records)
    gini_train = gini_index(predictions, actuals, masses)
    gini_test = None
    ratio_test = None
    test_records = portfolio.test_records()
    if test_records:
        predictions_t, actuals_t, masses_t = score(test_records)
        gini_test = gini_index(predictions_t, actuals_t, masses_t)
        ratio_test = loss_ratio(predictions_t, actuals_t, masses_t)
    return EvaluationReport(gini_train=gini_train, gini_test=gini_test,
                            loss_ratio_test=ratio_test,
                            J_prime=solution.grouped_count(0),
                            sum_K_prime=(solution.grouped_count(1)
                                         if len(solution.level_maps) >= 2 else None),
                            calibrated=True)


# --- reporting statistics -----------------------------------------------------------


@dataclass(frozen=True)
class CategoryStats:
    key: str
    avg_damage_rate: float     # mass-weighted average damage rate
    claim_frequency: float     # claims per unit of mass
    mass: float


def category_stats(records, key) -> list[CategoryStats]:
    """Weighted average damage rate and expected claim frequency per category.

    ``key`` maps a record to its (original or grouped) category."""
    sums: dict[str, list[float]] = {}
    for record in records:
        k = key(record)
        entry = sums.setdefault(k, [0.0, 0.0, 0.0])
        entry[0] += record.salary_mass * damage_rate(record)
        entry[1] += record.claim_count
        entry[2] += record.salary_mass
    return [CategoryStats(key=k, avg_damage_rate=v[0] / v[2],
                          claim_frequency=v[1] / v[2], mass=v[2])
            for k, v in sorted(sums.items())]


def display_transform(values) -> np.ndarray:
    """log(v + 1e-4), then clamped to the inner boxplot fences of the sample
    (linear-interpolation quartiles)."""
    values = np.asarray(values, dtype=float)
    if np.any(values < 0):
        raise DataError("display_transform expects non-negative values")
    transformed = np.log(values + 1e-4)
    q1, q3 = np.quantile(transformed, [0.25, 0.75])
    iqr = q3 - q1
    return np.clip(transformed, q1 - 1.5 * iqr, q3 + 1.5 * iqr)


def write_report(report: EvaluationReport, path) -> None:
    """Flat key=value text file."""
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(f"J_prime={report.J_prime}\n")
        handle.write(f"sum_K_prime={'' if report.sum_K_prime is None else report.sum_K_prime}\n")
        handle.write(f"gini_train={format_number(report.gini_train)}\n")
        handle.write(f"gini_test={'' if report.gini_test is None else format_number(report.gini_test)}\n")
        handle.write(f"loss_ratio_test={'' if report.loss_ratio_test is None else format_number(report.loss_ratio_test)}\n")
        handle.write(f"calibrated={int(report.calibrated)}\n")
