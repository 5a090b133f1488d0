"""Explanation artifacts for fitted models.

Five techniques over one prediction interface (any object with a
`.predict(matrix)` method and `.feature_names`): gain and permutation
feature importance, partial dependence curves, individual conditional
expectation bundles, local linear surrogates, and Shapley attributions
under an empirical background distribution. Plus a threshold scan that
turns a partial dependence curve into candidate decision levels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Table
from .gbt import Ensemble, rmse
from .rng import rng_from

EXACT_SHAP_MAX_FEATURES = 12
DEFAULT_PDP_GRID = 20


class ConstantFeature(ValueError):
    """A curve over a feature needs at least two distinct present values."""


class TooManyFeatures(ValueError):
    """Exact Shapley enumeration is capped at 12 features; sample instead."""


class EmptyBackground(ValueError):
    """Shapley values need a non-empty background sample."""


@dataclass(frozen=True)
class ImportanceEntry:
    feature: str
    score: float
    percent: float


@dataclass(frozen=True)
class ImportanceReport:
    """Features ranked by score; percents of the clamped-score total."""

    mode: str
    entries: tuple[ImportanceEntry, ...]

    def rank_of(self, feature: str) -> int:
        for i, e in enumerate(self.entries):
            if e.feature == feature:
                return i
        raise KeyError(feature)

    def ranking(self) -> tuple[str, ...]:
        return tuple(e.feature for e in self.entries)


@dataclass(frozen=True)
class PdpCurve:
    feature: str
    grid: np.ndarray
    mean_prediction: np.ndarray
    n_rows: int


@dataclass(frozen=True)
class IceBundle:
    feature: str
    grid: np.ndarray
    curves: np.ndarray  # (n_rows, n_grid)
    centered: bool


@dataclass(frozen=True)
class LimeExplanation:
    anchor: np.ndarray
    intercept: float
    weights: tuple[tuple[str, float], ...]  # top-m by |weight|, descending
    r_squared: float
    n_samples: int
    kernel_width: float
    seed: int
    singular_fallback: bool = False
    imputed_features: tuple[str, ...] = field(default_factory=tuple)


@dataclass(frozen=True)
class ShapAttribution:
    anchor: np.ndarray
    feature_names: tuple[str, ...]
    values: np.ndarray
    baseline: float
    method: str  # "exact" | "permutation"
    n_permutations: int | None = None
    seed: int | None = None
    distributed_residual: float | None = None

    def total(self) -> float:
        return float(np.sum(self.values) + self.baseline)


@dataclass(frozen=True)
class ThresholdFinding:
    feature: str
    threshold: float
    change: float  # curve value after minus before
    ratio: float  # max/min of the adjacent pair
    direction: str  # which side of the threshold prices higher


def _rank_entries(
    features: tuple[str, ...], raw_scores: np.ndarray
) -> tuple[ImportanceEntry, ...]:
    clamped = np.maximum(raw_scores, 0.0)
    total = float(clamped.sum())
    order = sorted(range(len(features)), key=lambda j: (-clamped[j], j))
    entries = []
    for j in order:
        pct = 100.0 * float(clamped[j]) / total if total > 0 else 0.0
        entries.append(ImportanceEntry(features[j], float(raw_scores[j]), pct))
    return tuple(entries)


def importance_gain(ensemble: Ensemble) -> ImportanceReport:
    """Per-feature sum of split gains across every tree, as percents."""
    scores = np.zeros(ensemble.d, dtype=np.float64)
    for tree in ensemble.trees:
        internal = tree.feature >= 0
        np.add.at(scores, tree.feature[internal], tree.gain[internal])
    return ImportanceReport(
        mode="gain", entries=_rank_entries(ensemble.feature_names, scores)
    )


def importance_permutation(
    model, table: Table, repeats: int = 5, seed: int = 0
) -> ImportanceReport:
    """Mean RMSE increase when one feature column is shuffled.

    Raw scores may be negative; ranking and percents clamp them at zero
    but the reported score stays raw.
    """
    if table.n < 2:
        raise ValueError("permutation importance needs at least 2 rows")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    base = rmse(model.predict(table.rows), table.target)
    d = table.d
    scores = np.zeros(d, dtype=np.float64)
    for j in range(d):
        deltas = 0.0
        for rep in range(repeats):
            rng = rng_from(seed, j, rep)
            perm = rng.permutation(table.n)
            shuffled = np.array(table.rows)
            shuffled[:, j] = shuffled[perm, j]
            deltas += rmse(model.predict(shuffled), table.target) - base
        scores[j] = deltas / repeats
    return ImportanceReport(
        mode="permutation",
        entries=_rank_entries(tuple(table.feature_names), scores),
    )


def _resolve_feature(table: Table, feature) -> int:
    if isinstance(feature, str):
        return table.feature_index(feature)
    return int(feature)


def _quantile_grid(table: Table, j: int, n_grid: int) -> np.ndarray:
    col = table.rows[:, j]
    present = col[~np.isnan(col)]
    if np.unique(present).size < 2:
        raise ConstantFeature(
            f"feature {table.feature_names[j]!r} has fewer than 2 distinct values"
        )
    if n_grid < 2:
        raise ValueError("n_grid must be >= 2")
    levels = np.arange(n_grid, dtype=np.float64) / (n_grid - 1)
    grid = np.quantile(present, levels)
    keep = np.concatenate(([True], grid[1:] != grid[:-1]))
    return np.ascontiguousarray(grid[keep])


def _curve_matrix(model, table: Table, j: int, grid: np.ndarray) -> np.ndarray:
    """(n_grid, n_rows) predictions with feature j pinned to each grid value."""
    out = np.empty((grid.size, table.n), dtype=np.float64)
    X = np.array(table.rows)
    for gi, v in enumerate(grid):
        X[:, j] = v
        out[gi] = model.predict(X)
    return out


def pdp(model, table: Table, feature, n_grid: int = DEFAULT_PDP_GRID) -> PdpCurve:
    """Mean prediction as one feature sweeps a quantile grid.

    The grid sits at empirical quantile levels i/(n_grid - 1) of the
    feature's present values, deduplicated; every row is predicted with
    the feature overwritten by each grid value and averaged.
    """
    j = _resolve_feature(table, feature)
    grid = _quantile_grid(table, j, n_grid)
    matrix = _curve_matrix(model, table, j, grid)
    curve = np.array([np.mean(matrix[gi]) for gi in range(grid.size)])
    return PdpCurve(
        feature=table.feature_names[j],
        grid=grid,
        mean_prediction=curve,
        n_rows=table.n,
    )


def ice(
    model,
    table: Table,
    feature,
    n_grid: int = DEFAULT_PDP_GRID,
    centered: bool = False,
) -> IceBundle:
    """Per-row prediction curves on the shared pdp grid.

    Centered curves subtract each row's value at the lowest grid point, so
    every curve starts at zero and the bundle shows per-row deviations.
    """
    j = _resolve_feature(table, feature)
    grid = _quantile_grid(table, j, n_grid)
    matrix = _curve_matrix(model, table, j, grid)
    curves = np.ascontiguousarray(matrix.T)
    if centered:
        curves = curves - curves[:, :1]
    return IceBundle(
        feature=table.feature_names[j], grid=grid, curves=curves, centered=centered
    )


def lime_explain(
    model,
    anchor,
    table: Table,
    n_samples: int = 1000,
    top_m: int = 5,
    kernel_width: float | None = None,
    seed: int = 0,
) -> LimeExplanation:
    """Weighted linear surrogate around one row.

    Perturbations add per-feature Gaussian noise scaled to the feature's
    std over the table; samples are weighted by exp(-dist^2 / width^2)
    with distances taken over std-standardized features, and a weighted
    least-squares line is fit to the model's predictions. A singular
    normal system falls back to a 1e-8 ridge, flagged in the result.
    """
    d = table.d
    if n_samples < d + 2:
        raise ValueError(f"n_samples must be at least d + 2 = {d + 2}")
    x = np.asarray(anchor, dtype=np.float64).copy()
    if x.shape != (d,):
        raise ValueError(f"anchor must have {d} entries")
    stds = np.empty(d)
    means = np.empty(d)
    for j in range(d):
        col = table.rows[:, j]
        present = col[~np.isnan(col)]
        stds[j] = float(present.std()) if present.size else 0.0
        means[j] = float(present.mean()) if present.size else 0.0
    imputed = tuple(
        table.feature_names[j] for j in range(d) if math.isnan(x[j])
    )
    for j in range(d):
        if math.isnan(x[j]):
            x[j] = means[j]
    if kernel_width is None:
        kernel_width = 0.75 * math.sqrt(d)

    rng = rng_from(seed)
    noise = rng.standard_normal((n_samples, d)) * stds
    samples = x + noise
    preds = model.predict(samples)

    safe_stds = np.where(stds > 0, stds, 1.0)
    dist_sq = np.sum(((samples - x) / safe_stds) ** 2, axis=1)
    weights = np.exp(-dist_sq / kernel_width**2)

    singular = False
    if np.all(preds == preds[0]):
        # Constant predictions: the surrogate is the constant itself and the
        # fit is declared perfect (zero residual against zero variance).
        beta = np.zeros(d + 1)
        beta[0] = float(preds[0])
        r_squared = 1.0
    else:
        design = np.column_stack([np.ones(n_samples), samples])
        wd = design * weights[:, None]
        gram = design.T @ wd
        rhs = design.T @ (weights * preds)
        try:
            beta = np.linalg.solve(gram, rhs)
            if not np.all(np.isfinite(beta)):
                raise np.linalg.LinAlgError("non-finite solution")
        except np.linalg.LinAlgError:
            singular = True
            beta = np.linalg.solve(gram + 1e-8 * np.eye(d + 1), rhs)
        fitted = design @ beta
        w_sum = float(weights.sum())
        w_mean = float((weights * preds).sum()) / w_sum
        ss_res = float((weights * (preds - fitted) ** 2).sum())
        ss_tot = float((weights * (preds - w_mean) ** 2).sum())
        r_squared = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot

    slopes = beta[1:]
    order = sorted(range(d), key=lambda j: (-abs(slopes[j]), j))[: max(0, top_m)]
    top = tuple((table.feature_names[j], float(slopes[j])) for j in order)
    return LimeExplanation(
        anchor=x,
        intercept=float(beta[0]),
        weights=top,
        r_squared=float(r_squared),
        n_samples=n_samples,
        kernel_width=float(kernel_width),
        seed=seed,
        singular_fallback=singular,
        imputed_features=imputed,
    )


def _composite_values(model, x, background: np.ndarray, member_masks: np.ndarray):
    """v(S) for each subset row-mask: mean prediction of x-on-S composites.

    member_masks is (n_sets, d) boolean; background is (b, d). Builds one
    (n_sets * b, d) matrix so a single batched predict serves all sets.
    """
    n_sets, d = member_masks.shape
    b = background.shape[0]
    tiled = np.tile(background, (n_sets, 1))
    take_x = np.repeat(member_masks, b, axis=0)
    tiled[take_x] = np.broadcast_to(x, (n_sets * b, d))[take_x]
    preds = model.predict(tiled)
    return preds.reshape(n_sets, b).mean(axis=1)


def _check_shap_inputs(model, anchor, background: Table):
    x = np.asarray(anchor, dtype=np.float64)
    d = len(model.feature_names) if hasattr(model, "feature_names") else background.d
    if x.shape != (d,):
        raise ValueError(f"anchor must have {d} entries")
    if background.n == 0:
        raise EmptyBackground("background table has no rows")
    bg = np.array(background.rows)
    return x, bg, d


def shap_exact(model, anchor, background: Table) -> ShapAttribution:
    """Shapley values by full subset enumeration.

    The value of a feature set S is the mean model prediction over
    background rows with the anchor's values substituted on S. Cost is
    2^d background sweeps, so d is capped at 12.
    """
    x, bg, d = _check_shap_inputs(model, anchor, background)
    if d > EXACT_SHAP_MAX_FEATURES:
        raise TooManyFeatures(
            f"{d} features exceeds the exact cap of {EXACT_SHAP_MAX_FEATURES}; "
            "use shap_sampled"
        )
    n_sets = 1 << d
    masks = np.zeros((n_sets, d), dtype=bool)
    for j in range(d):
        masks[:, j] = (np.arange(n_sets) >> j) & 1
    v = _composite_values(model, x, bg, masks)

    sizes = masks.sum(axis=1)
    fact = [math.factorial(i) for i in range(d + 1)]
    weight_by_size = np.array(
        [fact[s] * fact[d - 1 - s] / fact[d] for s in range(d)]
    )
    phi = np.zeros(d, dtype=np.float64)
    all_sets = np.arange(n_sets)
    for j in range(d):
        without = all_sets[(all_sets >> j) & 1 == 0]
        with_j = without | (1 << j)
        w = weight_by_size[sizes[without]]
        phi[j] = float(np.sum(w * (v[with_j] - v[without])))

    return ShapAttribution(
        anchor=x,
        feature_names=tuple(background.feature_names),
        values=phi,
        baseline=float(v[0]),
        method="exact",
    )


def shap_sampled(
    model, anchor, background: Table, n_permutations: int, seed: int = 0
) -> ShapAttribution:
    """Monte-Carlo permutation estimate of the same Shapley values.

    Marginal contributions are averaged over sampled feature orderings;
    the leftover between sum(phi) and v(full) - v(empty) is spread evenly
    across features so the efficiency identity holds by construction, and
    the amount moved is reported in distributed_residual.
    """
    if n_permutations < 1:
        raise ValueError("n_permutations must be >= 1")
    x, bg, d = _check_shap_inputs(model, anchor, background)
    rng = rng_from(seed)
    phi = np.zeros(d, dtype=np.float64)
    v_empty = None
    v_full = None

    chunk = max(1, min(n_permutations, 4_000_000 // max(1, (d + 1) * bg.shape[0] * d)))
    done = 0
    while done < n_permutations:
        batch = min(chunk, n_permutations - done)
        masks = np.zeros((batch * (d + 1), d), dtype=bool)
        perms = np.empty((batch, d), dtype=np.int64)
        for p in range(batch):
            perm = rng.permutation(d)
            perms[p] = perm
            base = p * (d + 1)
            for t in range(d):
                masks[base + t + 1] = masks[base + t]
                masks[base + t + 1, perm[t]] = True
        v = _composite_values(model, x, bg, masks).reshape(batch, d + 1)
        if v_empty is None:
            v_empty = float(v[0, 0])
            v_full = float(v[0, d])
        marginals = v[:, 1:] - v[:, :-1]
        for p in range(batch):
            phi[perms[p]] += marginals[p]
        done += batch

    phi /= n_permutations
    prediction_gap = v_full - v_empty
    residual = prediction_gap - float(phi.sum())
    phi += residual / d
    return ShapAttribution(
        anchor=x,
        feature_names=tuple(background.feature_names),
        values=phi,
        baseline=v_empty,
        method="permutation",
        n_permutations=n_permutations,
        seed=seed,
        distributed_residual=residual,
    )


def threshold_scan(
    curve: PdpCurve, min_jump_ratio: float
) -> list[ThresholdFinding]:
    """Adjacent-cell jumps of a partial dependence curve.

    Reports every adjacent grid pair whose value ratio (max over min)
    meets min_jump_ratio, ordered by ratio descending. The candidate
    threshold is the pair's midpoint; direction names the side of the
    threshold with the higher predicted value.
    """
    if curve.grid.size < 2:
        raise ValueError("curve needs at least 2 grid points")
    findings = []
    for i in range(curve.grid.size - 1):
        a = float(curve.mean_prediction[i])
        b = float(curve.mean_prediction[i + 1])
        lo, hi = min(a, b), max(a, b)
        if lo == hi:
            ratio = 1.0
        elif lo <= 0:
            ratio = math.inf
        else:
            ratio = hi / lo
        if ratio >= min_jump_ratio:
            findings.append(
                ThresholdFinding(
                    feature=curve.feature,
                    threshold=(float(curve.grid[i]) + float(curve.grid[i + 1])) / 2.0,
                    change=b - a,
                    ratio=ratio,
                    direction="higher_below" if a > b else "higher_above",
                )
            )
    findings.sort(key=lambda f: (-f.ratio, f.threshold))
    return findings
