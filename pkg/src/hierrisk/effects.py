"""Random-intercept models for damage rates and claim frequencies.

The damage-rate model is a weighted LMM (identity link, salary mass as
weight) with one or two nested random-intercept levels. Variance components
are estimated by EM-type REML updates around Henderson's mixed-model
equations; the predicted effects are the BLUPs at the final components.
The claim-frequency model is a Poisson random-intercept fit via penalized
quasi-likelihood: each outer step solves a weighted LMM on the working
response with the working weights and a unit residual variance.

Because the only fixed effect is an intercept and the design columns are
group indicators, the mixed-model equations are assembled from per-category
sums instead of record-level matrices.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import Portfolio, damage_rate, format_number
from .embeddings import EmbeddingTable
from .errors import DataError, MissingEffect, SingularSystem

VARIANCE_FLOOR = 1e-12
DEFAULT_TOL = 1e-8
LMM_MAX_ITER = 500
PQL_MAX_ITER = 200


@dataclass(frozen=True)
class RandomEffectsFit:
    """Predicted category effects from one random-intercept fit.

    ``effects`` holds the deepest level's predictions; for nested fits
    ``parent_effects`` carries the outer level. ``variance_components`` lists
    one value per random-effect level plus, for the LMM, the residual.
    """

    intercept: float
    effects: dict[str, float]
    variance_components: tuple[float, ...]
    converged: bool
    iterations: int
    parent_effects: Optional[dict[str, float]] = None
    variance_floored: bool = False
    all_zero_counts: bool = False
    calibrated: bool = False


class _Design:
    """Per-cell sufficient statistics for intercept + nested group indicators."""

    def __init__(self, outer_keys, nested_keys, parent_of_nested,
                 cell_w, cell_wy, ywy, n_records):
        self.outer_keys = outer_keys              # list of outer group keys
        self.nested_keys = nested_keys            # list or None
        self.parent_of_nested = parent_of_nested  # nested idx -> outer idx
        self.cell_w = cell_w                      # per deepest cell: sum of weights
        self.cell_wy = cell_wy                    # per deepest cell: sum of w*y
        self.ywy = ywy                            # sum of w*y^2
        self.n = n_records

    @property
    def q1(self):
        return len(self.outer_keys)

    @property
    def q2(self):
        return 0 if self.nested_keys is None else len(self.nested_keys)

    def outer_sums(self):
        if self.nested_keys is None:
            return self.cell_w, self.cell_wy
        w1 = np.zeros(self.q1)
        wy1 = np.zeros(self.q1)
        np.add.at(w1, self.parent_of_nested, self.cell_w)
        np.add.at(wy1, self.parent_of_nested, self.cell_wy)
        return w1, wy1


def _aggregate(records, grouping, nested_grouping, response, weight) -> _Design:
    """Collapse records to per-cell sums; cells are the deepest grouping keys."""
    outer_index: dict = {}
    nested_index: dict = {}
    parent_of_nested: list[int] = []
    cw: list[float] = []
    cwy: list[float] = []
    ywy = 0.0
    n = 0
    for record in records:
        okey = grouping(record)
        if okey not in outer_index:
            outer_index[okey] = len(outer_index)
        oi = outer_index[okey]
        if nested_grouping is not None:
            nkey = nested_grouping(record)
            if nkey not in nested_index:
                nested_index[nkey] = len(nested_index)
                parent_of_nested.append(oi)
                cw.append(0.0)
                cwy.append(0.0)
            ci = nested_index[nkey]
            if parent_of_nested[ci] != oi:
                raise DataError(f"nested group {nkey!r} appears under two parents")
        else:
            if len(cw) < len(outer_index):
                cw.append(0.0)
                cwy.append(0.0)
            ci = oi
        w = weight(record)
        y = response(record)
        cw[ci] += w
        cwy[ci] += w * y
        ywy += w * y * y
        n += 1
    if n == 0:
        raise DataError("no records to fit")
    return _Design(outer_keys=list(outer_index),
                   nested_keys=list(nested_index) if nested_grouping is not None else None,
                   parent_of_nested=np.array(parent_of_nested, dtype=int),
                   cell_w=np.array(cw), cell_wy=np.array(cwy), ywy=ywy, n_records=n)


def _solve_mme(design: _Design, lam1: float, lam2: float | None):
    """Solve Henderson's equations; returns (solution, inverse of coefficient matrix).

    Levels whose lambda is None (variance pinned to zero) are dropped, which
    fixes their effects at exactly zero.
    """
    w1, wy1 = design.outer_sums()
    use1 = lam1 is not None
    use2 = design.nested_keys is not None and lam2 is not None
    q1 = design.q1 if use1 else 0
    q2 = design.q2 if use2 else 0
    size = 1 + q1 + q2
    M = np.zeros((size, size))
    rhs = np.zeros(size)
    M[0, 0] = float(w1.sum())
    rhs[0] = float(wy1.sum())
    if use1:
        s = slice(1, 1 + q1)
        M[0, s] = w1
        M[s, 0] = w1
        M[s, s] = np.diag(w1 + lam1)
        rhs[s] = wy1
    if use2:
        t = slice(1 + q1, size)
        M[0, t] = design.cell_w
        M[t, 0] = design.cell_w
        M[t, t] = np.diag(design.cell_w + lam2)
        rhs[t] = design.cell_wy
        if use1:
            cross = np.zeros((q1, design.q2))
            cross[design.parent_of_nested, np.arange(design.q2)] = design.cell_w
            M[s, t] = cross
            M[t, s] = cross.T
    try:
        C = np.linalg.inv(M)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"mixed-model equations are singular: {exc}") from exc
    solution = C @ rhs
    if not np.all(np.isfinite(solution)):
        raise SingularSystem("mixed-model solve produced non-finite values")
    return solution, C, rhs


def _weighted_lmm(design: _Design, *, fixed_variance=None, residual_fixed=None,
                  tol=DEFAULT_TOL, max_iter=LMM_MAX_ITER):
    """EM-REML loop for a one- or two-level random-intercept weighted LMM.

    Returns (mu, u1, u2, variances, converged, iterations, floored);
    ``variances`` is (s1, [s2,] se).
    """
    nested = design.nested_keys is not None
    n_levels = 2 if nested else 1

    # pinned[i] is None for components estimated by EM-REML; a number pins it.
    # Pinning a level at exactly 0 removes its effects from the solve.
    expected = n_levels + (1 if residual_fixed is None else 0)
    if fixed_variance is not None:
        if len(fixed_variance) != expected:
            raise DataError(f"expected {expected} variance components, got {len(fixed_variance)}")
        pinned: list = list(fixed_variance)
    else:
        pinned = [None] * expected
    if residual_fixed is not None:
        pinned.append(float(residual_fixed))
    if any(v is not None and v < 0 for v in pinned):
        raise DataError("variance components must be >= 0")

    grand_mean = design.cell_wy.sum() / design.cell_w.sum()
    total_var = max(design.ywy / design.cell_w.sum() - grand_mean**2, VARIANCE_FLOOR)
    sigmas = [float(p) if p is not None else max(total_var / 2.0, VARIANCE_FLOOR)
              for p in pinned]

    floored = False
    iterations = 0
    free = [i for i, p in enumerate(pinned) if p is None]
    converged = not free

    def lambdas():
        se = sigmas[-1]
        lam1 = None if sigmas[0] == 0.0 else se / sigmas[0]
        lam2 = None
        if nested:
            lam2 = None if sigmas[1] == 0.0 else se / sigmas[1]
        return lam1, lam2

    if free:
        for iterations in range(1, max_iter + 1):
            lam1, lam2 = lambdas()
            solution, C, rhs = _solve_mme(design, lam1, lam2)
            se = sigmas[-1]
            new = list(sigmas)
            if pinned[-1] is None:
                resid = design.ywy - float(rhs @ solution)
                new[-1] = max(resid / (design.n - 1), VARIANCE_FLOOR)
                if new[-1] == VARIANCE_FLOOR:
                    floored = True
            offset = 1
            for level in range(n_levels):
                q = design.q1 if level == 0 else design.q2
                if sigmas[level] == 0.0:
                    continue  # level dropped from the solve entirely
                if pinned[level] is not None:
                    offset += q
                    continue
                u = solution[offset:offset + q]
                trace = float(np.trace(C[offset:offset + q, offset:offset + q]))
                new[level] = max((float(u @ u) + se * trace) / q, VARIANCE_FLOOR)
                if new[level] == VARIANCE_FLOOR:
                    floored = True
                offset += q
            change = max(abs(new[i] - sigmas[i]) / max(abs(sigmas[i]), 1e-30) for i in free)
            sigmas = new
            if change < tol:
                converged = True
                break

    lam1, lam2 = lambdas()
    solution, _, _ = _solve_mme(design, lam1, lam2)
    mu = float(solution[0])
    offset = 1
    u1 = np.zeros(design.q1)
    if sigmas[0] != 0.0:
        u1 = solution[offset:offset + design.q1]
        offset += design.q1
    u2 = np.zeros(design.q2)
    if nested and sigmas[1] != 0.0:
        u2 = solution[offset:offset + design.q2]
    return mu, u1, u2, tuple(sigmas), converged, iterations, floored


def fit_damage_rate_lmm(portfolio: Portfolio, grouping: Callable,
                        nested_grouping: Callable | None = None, *,
                        fixed_variance: Sequence[float] | None = None,
                        tol: float = DEFAULT_TOL,
                        max_iter: int = LMM_MAX_ITER) -> RandomEffectsFit:
    """Weighted random-intercept LMM for the damage rate.

    ``grouping`` maps a record to its outer category; ``nested_grouping``,
    when given, maps it to the child category (which must nest within the
    outer one). Salary mass enters as the weight. ``fixed_variance`` pins the
    variance components (one per level plus residual) instead of estimating
    them; a component pinned at zero removes that level's effects entirely.
    """
    design = _aggregate(portfolio.records, grouping, nested_grouping,
                        response=damage_rate, weight=lambda r: r.salary_mass)
    mu, u1, u2, sigmas, converged, iterations, floored = _weighted_lmm(
        design, fixed_variance=fixed_variance, tol=tol, max_iter=max_iter)
    outer = {k: float(v) for k, v in zip(design.outer_keys, u1)}
    if nested_grouping is None:
        return RandomEffectsFit(intercept=mu, effects=outer,
                                variance_components=sigmas, converged=converged,
                                iterations=iterations, variance_floored=floored)
    nested = {k: float(v) for k, v in zip(design.nested_keys, u2)}
    return RandomEffectsFit(intercept=mu, effects=nested, parent_effects=outer,
                            variance_components=sigmas, converged=converged,
                            iterations=iterations, variance_floored=floored)


def fit_frequency_poisson(portfolio: Portfolio, grouping: Callable,
                          nested_grouping: Callable | None = None, *,
                          fixed_variance: Sequence[float] | None = None,
                          tol: float = DEFAULT_TOL,
                          max_iter: int = PQL_MAX_ITER) -> RandomEffectsFit:
    """Poisson random-intercept fit (log link, log salary mass as offset) via PQL.

    Returns effects on the linear-predictor scale. If the portfolio has no
    claims at all the fit degenerates to a floor log-rate intercept with zero
    effects and is flagged.
    """
    records = portfolio.records
    total_n = sum(r.claim_count for r in records)
    total_w = sum(r.salary_mass for r in records)

    design0 = _aggregate(records, grouping, nested_grouping,
                         response=lambda r: 0.0, weight=lambda r: r.salary_mass)
    nested = nested_grouping is not None
    n_levels = 2 if nested else 1
    if total_n == 0:
        # half a claim over the whole exposure: a defensible "no signal" rate
        return RandomEffectsFit(intercept=math.log(0.5 / total_w),
                                effects={k: 0.0 for k in (design0.nested_keys if nested else design0.outer_keys)},
                                parent_effects={k: 0.0 for k in design0.outer_keys} if nested else None,
                                variance_components=(0.0,) * n_levels,
                                converged=True, iterations=0, all_zero_counts=True)

    # per-cell claim and exposure sums drive the whole PQL iteration
    counts = _aggregate(records, grouping, nested_grouping,
                        response=lambda r: r.claim_count / r.salary_mass,
                        weight=lambda r: r.salary_mass)
    cell_n = counts.cell_wy            # sum of claim counts per cell
    cell_w = counts.cell_w             # sum of salary mass per cell
    q1, q2 = counts.q1, counts.q2

    mu = math.log(total_n / total_w)
    u1 = np.zeros(q1)
    u2 = np.zeros(q2)
    sigmas = [0.1] * n_levels
    floored = False
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        if nested:
            eta_cell = mu + u1[counts.parent_of_nested] + u2
        else:
            eta_cell = mu + u1
        m_cell = cell_w * np.exp(eta_cell)          # expected claims per cell
        z_cell = eta_cell + (cell_n - m_cell) / m_cell
        work = _Design(outer_keys=counts.outer_keys, nested_keys=counts.nested_keys,
                       parent_of_nested=counts.parent_of_nested,
                       cell_w=m_cell, cell_wy=m_cell * z_cell,
                       ywy=float(m_cell @ (z_cell * z_cell)), n_records=counts.n)
        if fixed_variance is not None:
            new_mu, new_u1, new_u2, s, _, _, _ = _weighted_lmm(
                work, fixed_variance=fixed_variance, residual_fixed=1.0)
            sigmas = list(s[:-1])
        else:
            new_mu, new_u1, new_u2, s, _, _, fl = _weighted_lmm(
                work, residual_fixed=1.0, tol=tol, max_iter=LMM_MAX_ITER)
            sigmas = list(s[:-1])
            floored = floored or fl
        change = max(abs(new_mu - mu),
                     float(np.max(np.abs(new_u1 - u1), initial=0.0)),
                     float(np.max(np.abs(new_u2 - u2), initial=0.0)))
        mu, u1, u2 = new_mu, new_u1, new_u2
        if change < tol:
            converged = True
            break

    outer = {k: float(v) for k, v in zip(counts.outer_keys, u1)}
    if not nested:
        return RandomEffectsFit(intercept=mu, effects=outer,
                                variance_components=tuple(sigmas),
                                converged=converged, iterations=iterations,
                                variance_floored=floored)
    nested_effects = {k: float(v) for k, v in zip(counts.nested_keys, u2)}
    return RandomEffectsFit(intercept=mu, effects=nested_effects, parent_effects=outer,
                            variance_components=tuple(sigmas),
                            converged=converged, iterations=iterations,
                            variance_floored=floored)


# --- feature matrices ---------------------------------------------------------


@dataclass(frozen=True)
class FeatureMatrix:
    """Per-category feature rows: damage effect, frequency effect, embedding."""

    keys: tuple[str, ...]
    values: np.ndarray
    encoder_name: str = "unknown"

    def full_rows(self) -> np.ndarray:
        return self.values

    def risk_rows(self) -> np.ndarray:
        return self.values[:, :2]

    def row(self, key: str) -> np.ndarray:
        return self.values[self.keys.index(key)]


def build_feature_matrix(dr_fit: RandomEffectsFit, cf_fit: RandomEffectsFit,
                         embeddings: EmbeddingTable,
                         categories: Sequence[str]) -> FeatureMatrix:
    """One row per category, in the given order: (damage effect, frequency
    effect, embedding components)."""
    rows = []
    for category in categories:
        if category not in dr_fit.effects:
            raise MissingEffect(f"no damage-rate effect for category {category!r}")
        if category not in cf_fit.effects:
            raise MissingEffect(f"no frequency effect for category {category!r}")
        vector = embeddings.get(category)
        rows.append(np.concatenate(([dr_fit.effects[category], cf_fit.effects[category]],
                                    vector)))
    return FeatureMatrix(keys=tuple(categories), values=np.array(rows),
                         encoder_name=embeddings.encoder_name)


def write_effects(dr_fit: RandomEffectsFit, cf_fit: RandomEffectsFit, path) -> None:
    """Export ``category,effect_dr,effect_cf`` rows for the shared categories."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["category", "effect_dr", "effect_cf"])
        for key in sorted(dr_fit.effects, key=lambda k: (len(k), k)):
            writer.writerow([key, format_number(dr_fit.effects[key]),
                             format_number(cf_fit.effects.get(key, 0.0))])


def write_variance_components(dr_fit: RandomEffectsFit, cf_fit: RandomEffectsFit, path) -> None:
    """Sidecar listing each model's variance components (LMM includes residual)."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["model", "component", "value"])
        for name, fit in (("damage_rate", dr_fit), ("claim_frequency", cf_fit)):
            n_random = len(fit.variance_components) - (1 if name == "damage_rate" else 0)
            labels = [f"level_{i + 1}" for i in range(n_random)]
            if name == "damage_rate":
                labels.append("residual")
            for label, value in zip(labels, fit.variance_components):
                writer.writerow([name, label, format_number(float(value))])
