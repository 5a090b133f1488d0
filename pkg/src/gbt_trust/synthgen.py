"""Synthetic CDS panels from a forward-intensity ground truth.

The default hazard of a firm is exponential-affine in its covariates,
lambda = exp(b0 + b1*x1 + ... + bk*xk), and the quoted five-year premium
follows the credit triangle, spread = lambda * (1 - recovery), scaled to
basis points. Because the data-generating process is known exactly, the
explanation artifacts produced downstream can be validated against it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Table
from .rng import rng_from

BASIS_POINTS = 1e4


class DimensionMismatch(ValueError):
    """Feature vector length does not match the coefficient vector."""


class NonPositiveLambda(ValueError):
    """Intensity paths must be strictly positive."""


class NonPositiveDt(ValueError):
    """Integration step must be strictly positive."""


class RecoveryOutOfRange(ValueError):
    """Recovery rates live in [0, 1]."""


@dataclass(frozen=True)
class IntensityModel:
    """Hazard-rate coefficients, intercept first.

    coefficients = [b0, b1, ..., bk]; feature_names label x1..xk in order.
    """

    coefficients: np.ndarray
    feature_names: tuple[str, ...]

    def __post_init__(self):
        coef = np.ascontiguousarray(self.coefficients, dtype=np.float64)
        names = tuple(self.feature_names)
        if coef.ndim != 1 or coef.size != len(names) + 1:
            raise DimensionMismatch(
                f"need {len(names) + 1} coefficients (intercept first), got {coef.size}"
            )
        if not np.all(np.isfinite(coef)):
            raise ValueError("coefficients must be finite")
        coef.flags.writeable = False
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(self, "feature_names", names)

    @property
    def k(self) -> int:
        return len(self.feature_names)


@dataclass(frozen=True)
class SurvivalCurve:
    """Survival probabilities on an increasing time grid starting at 0."""

    times: np.ndarray
    survival: np.ndarray

    def __post_init__(self):
        times = np.ascontiguousarray(self.times, dtype=np.float64)
        surv = np.ascontiguousarray(self.survival, dtype=np.float64)
        if times.shape != surv.shape or times.ndim != 1 or times.size == 0:
            raise ValueError("times and survival must be equal-length vectors")
        if times[0] != 0.0 or np.any(np.diff(times) <= 0):
            raise ValueError("times must start at 0 and strictly increase")
        if surv[0] != 1.0:
            raise ValueError("survival must start at 1")
        if np.any(surv <= 0) or np.any(surv > 1) or np.any(np.diff(surv) > 0):
            raise ValueError("survival must be nonincreasing within (0, 1]")
        times.flags.writeable = False
        surv.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "survival", surv)


@dataclass(frozen=True)
class PanelSpec:
    """Shape and sampling ranges of a generated firm-period panel.

    covariates maps feature name -> (low, high) uniform range for every
    covariate except recovery, which has its own range inside (0, 1).
    Missing values are injected into feature cells at missing_rate, but
    never into the target and never into the recovery column, because
    recovery prices the target.
    """

    n_firms: int
    n_periods: int
    seed: int
    covariates: dict[str, tuple[float, float]]
    recovery_range: tuple[float, float]
    missing_rate: float = 0.0
    target_name: str = "spread5"

    def __post_init__(self):
        if self.n_firms < 1 or self.n_periods < 1:
            raise ValueError("n_firms and n_periods must be positive")
        for name, (low, high) in self.covariates.items():
            if not low < high:
                raise ValueError(f"covariate {name!r}: low must be < high")
        if "recovery" in self.covariates:
            raise ValueError("recovery has its own range; omit it from covariates")
        lo, hi = self.recovery_range
        if not (0.0 <= lo < hi <= 1.0):
            raise ValueError("recovery_range: need 0 <= low < high <= 1")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ValueError("missing_rate: must be in [0, 1)")
        object.__setattr__(self, "covariates", dict(self.covariates))

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(self.covariates) + ("recovery",)


@dataclass(frozen=True)
class GeneratedPanel:
    """A panel Table plus the true hazard sidecar used by oracle tests."""

    table: Table
    lambdas: np.ndarray
    firm_index: np.ndarray
    period_index: np.ndarray


def forward_intensity(model: IntensityModel, x) -> float:
    """Hazard rate exp(b0 + sum_j b_j * x_j); strictly positive."""
    vec = np.asarray(x, dtype=np.float64)
    if vec.shape != (model.k,):
        raise DimensionMismatch(f"expected {model.k} features, got {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise ValueError("features must be finite")
    return math.exp(float(model.coefficients[0]) + float(vec @ model.coefficients[1:]))


def survival_probability(lambda_path, dt: float, tau_index: int) -> float:
    """exp of minus the left-Riemann hazard integral over the first tau_index steps."""
    path = np.asarray(lambda_path, dtype=np.float64)
    if np.any(path <= 0) or not np.all(np.isfinite(path)):
        raise NonPositiveLambda("lambda path must be strictly positive and finite")
    if dt <= 0:
        raise NonPositiveDt("dt must be strictly positive")
    if tau_index < 0 or tau_index > path.size:
        raise ValueError(f"tau_index must be in [0, {path.size}]")
    if tau_index == 0:
        return 1.0
    return math.exp(-float(np.sum(path[:tau_index])) * dt)


def survival_curve(lambda_path, dt: float) -> SurvivalCurve:
    """Survival probabilities at every grid time 0, dt, ..., len(path)*dt."""
    path = np.asarray(lambda_path, dtype=np.float64)
    times = np.arange(path.size + 1, dtype=np.float64) * dt
    surv = np.array(
        [survival_probability(path, dt, i) for i in range(path.size + 1)]
    )
    return SurvivalCurve(times=times, survival=surv)


def spread_from_intensity(lam: float, recovery: float) -> float:
    """Credit-triangle premium lambda * (1 - recovery) in basis points."""
    if not math.isfinite(lam) or not math.isfinite(recovery):
        raise ValueError("inputs must be finite")
    if not 0.0 <= recovery <= 1.0:
        raise RecoveryOutOfRange(f"recovery {recovery} outside [0, 1]")
    return lam * (1.0 - recovery) * BASIS_POINTS


def generate_panel(model: IntensityModel, spec: PanelSpec) -> GeneratedPanel:
    """Draw a seeded firm-period panel priced by the intensity model.

    Covariates are uniform over their configured ranges, one independent
    substream per firm so generation order cannot change the data. The
    target is computed from the true (pre-masking) covariate values; the
    missing mask only hides values from the learner.
    """
    names = spec.feature_names
    missing = set(model.feature_names) - set(names)
    if missing:
        raise ValueError(f"model features absent from panel spec: {sorted(missing)}")
    model_cols = [names.index(f) for f in model.feature_names]
    recovery_col = names.index("recovery")
    maskable = [j for j in range(len(names)) if j != recovery_col]

    per_firm_rows = []
    per_firm_mask = []
    per_firm_lambda = []
    ranges = list(spec.covariates.values()) + [spec.recovery_range]
    for firm in range(spec.n_firms):
        rng = rng_from(spec.seed, firm)
        block = np.empty((spec.n_periods, len(names)), dtype=np.float64)
        for j, (low, high) in enumerate(ranges):
            block[:, j] = rng.uniform(low, high, size=spec.n_periods)
        lam = np.exp(
            model.coefficients[0] + block[:, model_cols] @ model.coefficients[1:]
        )
        mask = np.zeros_like(block, dtype=bool)
        if spec.missing_rate > 0.0:
            for j in maskable:
                mask[:, j] = rng.uniform(size=spec.n_periods) < spec.missing_rate
        per_firm_rows.append(block)
        per_firm_mask.append(mask)
        per_firm_lambda.append(lam)

    rows = np.vstack(per_firm_rows)
    mask = np.vstack(per_firm_mask)
    lambdas = np.concatenate(per_firm_lambda)
    target = lambdas * (1.0 - rows[:, recovery_col]) * BASIS_POINTS
    table = Table(
        feature_names=names,
        rows=rows,
        missing_mask=mask,
        target=target,
        target_name=spec.target_name,
    )
    firm_index = np.repeat(np.arange(spec.n_firms), spec.n_periods)
    period_index = np.tile(np.arange(spec.n_periods), spec.n_firms)
    return GeneratedPanel(
        table=table,
        lambdas=lambdas,
        firm_index=firm_index,
        period_index=period_index,
    )


def write_lambda_sidecar(panel: GeneratedPanel, path) -> None:
    """True hazards keyed by (firm, period), for oracle tests."""
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["firm", "period", "lambda"])
        for f, p, lam in zip(panel.firm_index, panel.period_index, panel.lambdas):
            writer.writerow([int(f), int(p), repr(float(lam))])
