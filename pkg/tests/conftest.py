"""Shared fixtures: a calibrated synthetic panel and hand-built models."""
from __future__ import annotations

import numpy as np
import pytest

from gbt_trust import data as data_mod
from gbt_trust import gbt, synthgen

# Panel with a deliberately graded effect ladder: recovery dominates
# (pricing plus a negative hazard loading), then default_spread,
# equity_value, price_sale, interest_coverage; inventory_turnover carries
# zero weight and exists to act as a pure-noise regressor.
PANEL_FEATURES = (
    "equity_value",
    "price_sale",
    "inventory_turnover",
    "interest_coverage",
    "default_spread",
    "recovery",
)
PANEL_BETAS = (-4.0, -0.60, 0.27, 0.0, -0.13, 0.9, -1.3)
PANEL_RANGES = {
    "equity_value": (0.0, 2.0),
    "price_sale": (0.0, 3.0),
    "inventory_turnover": (0.0, 2.0),
    "interest_coverage": (0.0, 4.0),
    "default_spread": (0.0, 2.0),
}
ZERO_BETA_FEATURE = "inventory_turnover"


def make_panel(
    seed: int = 7,
    n_firms: int = 5,
    n_periods: int = 200,
    missing_rate: float = 0.0,
    recovery_range: tuple[float, float] = (0.05, 0.95),
    betas: tuple[float, ...] = PANEL_BETAS,
) -> synthgen.GeneratedPanel:
    spec = synthgen.PanelSpec(
        n_firms=n_firms,
        n_periods=n_periods,
        seed=seed,
        covariates=dict(PANEL_RANGES),
        recovery_range=recovery_range,
        missing_rate=missing_rate,
    )
    model = synthgen.IntensityModel(
        coefficients=np.array(betas), feature_names=PANEL_FEATURES
    )
    return synthgen.generate_panel(model, spec)


@pytest.fixture(scope="session")
def panel() -> synthgen.GeneratedPanel:
    return make_panel()


@pytest.fixture(scope="session")
def panel_split(panel):
    return data_mod.train_test_split(panel.table, 0.7, 11)


@pytest.fixture(scope="session")
def fitted_model(panel_split):
    """A well-fit ensemble on the panel's training part, with holdout trace."""
    train_part, holdout = panel_split
    config = gbt.TrainConfig(
        n_trees=300,
        shrinkage=0.1,
        max_depth=5,
        min_node_rows=1,
        bag_fraction=1.0,
        column_sample=1.0,
        seed=0,
    )
    ensemble, trace = gbt.train(train_part, config, holdout)
    return ensemble, trace


def leaf_tree(value: float, n_rows: int = 1) -> gbt.RegressionTree:
    return gbt.RegressionTree(
        feature=np.array([-1], dtype=np.int32),
        threshold=np.array([0.0]),
        default_left=np.array([True]),
        left=np.array([-1], dtype=np.int32),
        right=np.array([-1], dtype=np.int32),
        value=np.array([value]),
        gain=np.array([0.0]),
        n_rows=np.array([n_rows], dtype=np.int32),
    )


def stump_tree(
    feature: int,
    threshold: float,
    left_value: float,
    right_value: float,
    default_left: bool = True,
    gain: float = 1.0,
) -> gbt.RegressionTree:
    return gbt.RegressionTree(
        feature=np.array([feature, -1, -1], dtype=np.int32),
        threshold=np.array([threshold, 0.0, 0.0]),
        default_left=np.array([default_left, True, True]),
        left=np.array([1, -1, -1], dtype=np.int32),
        right=np.array([2, -1, -1], dtype=np.int32),
        value=np.array([0.0, left_value, right_value]),
        gain=np.array([gain, 0.0, 0.0]),
        n_rows=np.array([2, 1, 1], dtype=np.int32),
    )


def make_ensemble(trees, feature_names, base_score=0.0, shrinkage=1.0) -> gbt.Ensemble:
    return gbt.Ensemble(
        base_score=base_score,
        shrinkage=shrinkage,
        trees=tuple(trees),
        feature_names=tuple(feature_names),
        train_config=gbt.TrainConfig(n_trees=max(1, len(trees))),
    )


def make_table(rows, target, feature_names=None, target_name="y") -> data_mod.Table:
    rows = np.asarray(rows, dtype=np.float64)
    if feature_names is None:
        feature_names = tuple(f"x{j}" for j in range(rows.shape[1]))
    return data_mod.Table(
        feature_names=tuple(feature_names),
        rows=rows,
        missing_mask=np.isnan(rows),
        target=np.asarray(target, dtype=np.float64),
        target_name=target_name,
    )
