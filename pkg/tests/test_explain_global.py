import numpy as np
import pytest

from gbt_trust import explain
from gbt_trust.explain import (
    ConstantFeature,
    PdpCurve,
    ice,
    importance_gain,
    importance_permutation,
    pdp,
    threshold_scan,
)
from gbt_trust.gbt import TrainConfig, train

from conftest import (
    ZERO_BETA_FEATURE,
    leaf_tree,
    make_ensemble,
    make_panel,
    make_table,
    stump_tree,
)


def pdp_double_loop_oracle(model, table, feature_index, grid):
    """Naive per-row, per-grid-value oracle for partial dependence."""
    values = np.empty((grid.size, table.n))
    for gi, v in enumerate(grid):
        for i in range(table.n):
            row = np.array(table.rows[i])
            row[feature_index] = v
            values[gi, i] = model.predict_row(row)
    return np.array([np.mean(values[gi]) for gi in range(grid.size)])


class TestImportanceGain:
    def test_single_split_model(self):
        e = make_ensemble([stump_tree(1, 0.5, -1.0, 1.0, gain=8.0)], ("a", "b"))
        report = importance_gain(e)
        assert report.entries[0].feature == "b"
        assert report.entries[0].percent == 100.0
        assert report.entries[1].score == 0.0

    def test_unsplit_feature_scores_zero(self, fitted_model, panel):
        report = importance_gain(fitted_model[0])
        percents = {e.feature: e.percent for e in report.entries}
        assert abs(sum(percents.values()) - 100.0) < 1e-6
        assert percents[ZERO_BETA_FEATURE] < 5.0

    def test_zero_beta_feature_negligible_vs_permutation_oracle(
        self, fitted_model, panel_split
    ):
        # The generator gives the feature no weight; both estimators must
        # agree it is negligible.
        _, holdout = panel_split
        gain_report = importance_gain(fitted_model[0])
        perm_report = importance_permutation(
            fitted_model[0], holdout, repeats=3, seed=0
        )
        gain_pct = {e.feature: e.percent for e in gain_report.entries}
        perm_pct = {e.feature: e.percent for e in perm_report.entries}
        assert gain_pct[ZERO_BETA_FEATURE] < 5.0
        assert perm_pct[ZERO_BETA_FEATURE] < 5.0

    def test_leaf_only_ensemble_all_zero(self):
        report = importance_gain(make_ensemble([leaf_tree(2.0)], ("a",)))
        assert report.entries[0].score == 0.0
        assert report.entries[0].percent == 0.0


class TestImportancePermutation:
    def test_constant_column_exactly_zero(self):
        rng = np.random.default_rng(6)
        rows = np.column_stack([np.full(30, 3.25), rng.normal(size=30)])
        y = rows[:, 1] * 2.0
        t = make_table(rows, y)
        cfg = TrainConfig(n_trees=10, shrinkage=0.5, max_depth=2, seed=0,
                          bag_fraction=1.0, column_sample=1.0, min_node_rows=1)
        model, _ = train(t, cfg)
        report = importance_permutation(model, t, repeats=4, seed=3)
        score = {e.feature: e.score for e in report.entries}
        assert score["x0"] == 0.0

    def test_pricing_feature_dominates(self, fitted_model, panel_split):
        _, holdout = panel_split
        report = importance_permutation(fitted_model[0], holdout, repeats=3, seed=1)
        assert report.rank_of("recovery") == 0
        assert report.entries[0].score > 0

    def test_determinism(self, fitted_model, panel_split):
        _, holdout = panel_split
        small = holdout.subset(np.arange(60))
        a = importance_permutation(fitted_model[0], small, repeats=2, seed=9)
        b = importance_permutation(fitted_model[0], small, repeats=2, seed=9)
        assert a == b


class TestPdp:
    def test_constant_model_flat(self):
        t = make_table(np.arange(10.0).reshape(5, 2), np.zeros(5))
        e = make_ensemble([leaf_tree(0.0)], ("x0", "x1"), base_score=4.5)
        curve = pdp(e, t, "x0", n_grid=3)
        assert np.all(curve.mean_prediction == 4.5)

    def test_five_row_hand_case(self):
        rows = np.column_stack([[1.0, 2.0, 3.0, 4.0, 5.0],
                                [10.0, 20.0, 30.0, 40.0, 50.0]])
        t = make_table(rows, np.zeros(5), feature_names=("f0", "f1"))
        # f0 <= 2.5 -> 100; else f1 <= 35 -> 200, else 300.
        tree_nodes = dict(
            feature=np.array([0, -1, 1, -1, -1], dtype=np.int32),
            threshold=np.array([2.5, 0.0, 35.0, 0.0, 0.0]),
            default_left=np.array([True] * 5),
            left=np.array([1, -1, 3, -1, -1], dtype=np.int32),
            right=np.array([2, -1, 4, -1, -1], dtype=np.int32),
            value=np.array([0.0, 100.0, 0.0, 200.0, 300.0]),
            gain=np.array([1.0, 0.0, 1.0, 0.0, 0.0]),
            n_rows=np.array([5, 2, 3, 2, 1], dtype=np.int32),
        )
        from gbt_trust.gbt import RegressionTree

        e = make_ensemble([RegressionTree(**tree_nodes)], ("f0", "f1"))
        curve = pdp(e, t, "f0", n_grid=3)
        np.testing.assert_array_equal(curve.grid, [1.0, 3.0, 5.0])
        # Hand enumeration: v=1 -> all 100; v in {3, 5} -> [200]*3 + [300]*2.
        np.testing.assert_array_equal(curve.mean_prediction, [100.0, 240.0, 240.0])

    def test_matches_double_loop_oracle_exactly(self, fitted_model, panel):
        model = fitted_model[0]
        table = panel.table.subset(np.arange(40))
        curve = pdp(model, table, "recovery", n_grid=5)
        j = table.feature_index("recovery")
        oracle = pdp_double_loop_oracle(model, table, j, curve.grid)
        np.testing.assert_array_equal(curve.mean_prediction, oracle)

    def test_additive_truth_recovered(self):
        # f(x) = 3*x0 + x1 learned to near zero error; the x0 curve must
        # track 3*v + mean(x1) within the achieved fit error.
        rng = np.random.default_rng(17)
        X = rng.uniform(0, 1, size=(400, 2))
        y = 3.0 * X[:, 0] + X[:, 1]
        t = make_table(X, y)
        cfg = TrainConfig(n_trees=400, shrinkage=0.3, max_depth=4, min_node_rows=1,
                          bag_fraction=1.0, column_sample=1.0, seed=0)
        model, trace = train(t, cfg)
        fit_rmse = trace.entries[-1].train_rmse
        assert fit_rmse < 0.02
        curve = pdp(model, t, "x0", n_grid=9)
        expected = 3.0 * curve.grid + X[:, 1].mean()
        inner = slice(1, -1)  # edges carry boundary bias
        assert np.max(np.abs(curve.mean_prediction[inner] - expected[inner])) < 0.1

    def test_quantile_grid_dedup(self):
        rows = np.column_stack([[1.0, 1.0, 1.0, 9.0], np.arange(4.0)])
        t = make_table(rows, np.zeros(4))
        e = make_ensemble([leaf_tree(0.0)], ("x0", "x1"))
        curve = pdp(e, t, "x0", n_grid=5)
        assert np.all(np.diff(curve.grid) > 0)

    def test_constant_feature_rejected(self):
        t = make_table(np.column_stack([np.ones(4), np.arange(4.0)]), np.zeros(4))
        e = make_ensemble([leaf_tree(0.0)], ("x0", "x1"))
        with pytest.raises(ConstantFeature):
            pdp(e, t, "x0", n_grid=3)


class TestIce:
    def test_column_mean_equals_pdp_exactly(self, fitted_model, panel):
        model = fitted_model[0]
        table = panel.table.subset(np.arange(60))
        curve = pdp(model, table, "equity_value", n_grid=6)
        bundle = ice(model, table, "equity_value", n_grid=6, centered=False)
        for gi in range(curve.grid.size):
            col = np.ascontiguousarray(bundle.curves[:, gi])
            assert np.mean(col) == curve.mean_prediction[gi]

    def test_centered_first_column_zero(self, fitted_model, panel):
        model = fitted_model[0]
        table = panel.table.subset(np.arange(30))
        bundle = ice(model, table, "recovery", n_grid=4, centered=True)
        assert np.all(bundle.curves[:, 0] == 0.0)

    def test_single_row_equals_pdp(self, fitted_model, panel):
        model = fitted_model[0]
        table = panel.table
        j = table.feature_index("recovery")
        grid_src = pdp(model, table, "recovery", n_grid=4)
        one = table.subset(np.array([3]))
        # A 1-row table has a single present value; reuse the bigger grid by
        # direct prediction instead.
        row = np.array(one.rows[0])
        bundle_vals = []
        for v in grid_src.grid:
            row[j] = v
            bundle_vals.append(model.predict_row(row))
        curve_vals = pdp_double_loop_oracle(model, one, j, grid_src.grid)
        np.testing.assert_array_equal(np.array(bundle_vals), curve_vals)

    def test_shapes(self, fitted_model, panel):
        model = fitted_model[0]
        table = panel.table.subset(np.arange(25))
        bundle = ice(model, table, "price_sale", n_grid=5)
        assert bundle.curves.shape == (25, bundle.grid.size)


class TestThresholdScan:
    def curve(self, grid, values):
        return PdpCurve(
            feature="recovery",
            grid=np.asarray(grid, dtype=float),
            mean_prediction=np.asarray(values, dtype=float),
            n_rows=10,
        )

    def test_flat_curve_empty(self):
        assert threshold_scan(self.curve([0.0, 1.0, 2.0], [5.0, 5.0, 5.0]), 1.5) == []

    def test_recovery_style_drop(self):
        findings = threshold_scan(self.curve([0.1, 0.3], [500.0, 100.0]), 4.0)
        assert len(findings) == 1
        f = findings[0]
        assert f.threshold == pytest.approx(0.2, rel=1e-12)
        assert f.ratio == pytest.approx(5.0, rel=1e-12)
        assert f.direction == "higher_below"
        assert f.change == pytest.approx(-400.0, rel=1e-12)

    def test_small_wiggles_ignored(self):
        assert threshold_scan(self.curve([0.0, 1.0, 2.0], [10.0, 12.0, 11.0]), 2.0) == []

    def test_ordered_by_ratio_descending(self):
        findings = threshold_scan(
            self.curve([0.0, 1.0, 2.0, 3.0], [100.0, 20.0, 200.0, 10.0]), 2.0
        )
        ratios = [f.ratio for f in findings]
        assert ratios == sorted(ratios, reverse=True)
        assert findings[0].ratio == pytest.approx(20.0)

    def test_rising_direction(self):
        findings = threshold_scan(self.curve([0.0, 1.0], [10.0, 100.0]), 4.0)
        assert findings[0].direction == "higher_above"
        assert findings[0].change == pytest.approx(90.0)
