import numpy as np
import pytest

from gbt_trust import explain
from gbt_trust.explain import (
    TooManyFeatures,
    lime_explain,
    shap_exact,
    shap_sampled,
)

from conftest import leaf_tree, make_ensemble, make_table, stump_tree


class LinearModel:
    """Prediction-interface double: f(x) = w . x + b."""

    def __init__(self, weights, bias=0.0, feature_names=None):
        self.w = np.asarray(weights, dtype=np.float64)
        self.b = float(bias)
        self.feature_names = tuple(
            feature_names or (f"x{j}" for j in range(self.w.size))
        )

    def predict(self, X):
        return np.asarray(X, dtype=np.float64) @ self.w + self.b

    def predict_row(self, x):
        return float(np.asarray(x, dtype=np.float64) @ self.w + self.b)


def background_table(rows, names=None):
    rows = np.asarray(rows, dtype=np.float64)
    return make_table(rows, np.zeros(rows.shape[0]), feature_names=names)


# -- LIME -----------------------------------------------------------------


class TestLime:
    def perturb_table(self, d=4, n=200, seed=0):
        rng = np.random.default_rng(seed)
        return make_table(rng.normal(size=(n, d)) * 2.0 + 1.0, rng.normal(size=n))

    def test_constant_model_convention(self):
        t = self.perturb_table(d=3)
        model = make_ensemble([leaf_tree(0.0)], t.feature_names, base_score=42.0)
        result = lime_explain(model, t.rows[0], t, n_samples=50, top_m=3, seed=1)
        assert result.intercept == 42.0
        assert all(w == 0.0 for _, w in result.weights)
        assert result.r_squared == 1.0

    def test_recovers_global_linear_model(self):
        t = self.perturb_table(d=5, n=400, seed=3)
        w = np.array([2.0, -1.5, 0.7, 3.2, -0.4])
        model = LinearModel(w, bias=5.0, feature_names=t.feature_names)
        result = lime_explain(model, t.rows[0], t, n_samples=400, top_m=5, seed=7)
        got = dict(result.weights)
        for j, name in enumerate(t.feature_names):
            assert got[name] == pytest.approx(w[j], rel=0.01)
        assert result.intercept == pytest.approx(5.0, rel=0.01)
        assert result.r_squared == pytest.approx(1.0, abs=1e-9)

    def test_determinism(self):
        t = self.perturb_table(d=3, seed=4)
        model = LinearModel([1.0, 2.0, 3.0], feature_names=t.feature_names)
        a = lime_explain(model, t.rows[1], t, n_samples=60, seed=11)
        b = lime_explain(model, t.rows[1], t, n_samples=60, seed=11)
        assert a.weights == b.weights
        assert a.intercept == b.intercept
        assert a.r_squared == b.r_squared

    def test_top_m_restricts_report(self):
        t = self.perturb_table(d=6, seed=5)
        model = LinearModel([5.0, 4.0, 3.0, 2.0, 1.0, 0.5], feature_names=t.feature_names)
        result = lime_explain(model, t.rows[0], t, n_samples=200, top_m=2, seed=0)
        assert len(result.weights) == 2
        assert [name for name, _ in result.weights] == ["x0", "x1"]

    def test_singular_fit_falls_back_to_ridge(self):
        # A constant feature makes the weighted design rank deficient, but
        # predictions still vary through the other column.
        rng = np.random.default_rng(9)
        rows = np.column_stack([np.full(80, 2.0), rng.normal(size=80)])
        t = make_table(rows, np.zeros(80))
        model = LinearModel([0.0, 1.0], feature_names=t.feature_names)
        result = lime_explain(model, t.rows[0], t, n_samples=80, seed=2)
        assert result.singular_fallback
        assert result.weights  # still produces an explanation

    def test_missing_anchor_entries_imputed(self):
        t = self.perturb_table(d=3, seed=6)
        model = LinearModel([1.0, 1.0, 1.0], feature_names=t.feature_names)
        anchor = np.array([np.nan, 0.5, 1.0])
        result = lime_explain(model, anchor, t, n_samples=60, seed=0)
        assert result.imputed_features == ("x0",)
        assert not np.isnan(result.anchor).any()

    def test_sample_floor(self):
        t = self.perturb_table(d=4)
        model = LinearModel([1, 1, 1, 1], feature_names=t.feature_names)
        with pytest.raises(ValueError):
            lime_explain(model, t.rows[0], t, n_samples=3)


# -- SHAP -----------------------------------------------------------------


class TestShapExact:
    def test_hand_computed_three_feature_table(self):
        # f = 2*x0 + x1, anchor [3, 1, 5], background {[0,0,0], [2,4,6]}.
        # Eight-subset enumeration done on paper:
        #   v({}) = 4, v({0}) = 8, v({1}) = 3, v({2}) = 4,
        #   v({0,1}) = 7, v({0,2}) = 8, v({1,2}) = 3, v(full) = 7
        # giving phi = (4, -1, 0) with baseline 4.
        model = LinearModel([2.0, 1.0, 0.0])
        bg = background_table([[0.0, 0.0, 0.0], [2.0, 4.0, 6.0]])
        result = shap_exact(model, np.array([3.0, 1.0, 5.0]), bg)
        assert result.baseline == pytest.approx(4.0, rel=1e-12)
        np.testing.assert_allclose(result.values, [4.0, -1.0, 0.0], atol=1e-9)
        assert result.values[2] == 0.0  # dummy axiom is exact

    def test_single_active_feature(self):
        tree = stump_tree(0, 0.0, -3.0, 3.0)
        model = make_ensemble([tree], ("a", "b"), base_score=1.0)
        bg = background_table([[1.0, 9.0], [2.0, -9.0]], names=("a", "b"))
        x = np.array([-1.0, 0.0])
        result = shap_exact(model, x, bg)
        prediction = model.predict_row(x)
        assert result.values[0] == pytest.approx(prediction - result.baseline, rel=1e-12)
        assert result.values[1] == 0.0

    def test_symmetry_axiom(self):
        model = LinearModel([1.0, 1.0])
        bg = background_table([[0.0, 0.0]])
        result = shap_exact(model, np.array([2.0, 2.0]), bg)
        assert result.values[0] == pytest.approx(result.values[1], rel=1e-12)

    def test_efficiency(self, fitted_model, panel):
        model = fitted_model[0]
        bg = panel.table.subset(np.arange(16))
        x = panel.table.rows[100]
        result = shap_exact(model, x, bg)
        prediction = model.predict_row(x)
        assert result.total() == pytest.approx(prediction, rel=1e-10)

    def test_too_many_features(self):
        d = 13
        model = LinearModel(np.ones(d))
        bg = background_table(np.zeros((2, d)))
        with pytest.raises(TooManyFeatures):
            shap_exact(model, np.ones(d), bg)

    def test_empty_background_unrepresentable(self):
        # Table enforces n >= 1, so an empty background cannot even be
        # built; the EmptyBackground guard covers duck-typed callers.
        from gbt_trust.data import EmptyTable

        with pytest.raises(EmptyTable):
            background_table(np.zeros((0, 2)))

    def test_additive_model_closed_form(self):
        # For additive f, phi_j = f_j(x_j) - mean_z f_j(z_j).
        rng = np.random.default_rng(14)
        w = np.array([1.5, -2.0, 0.75, 3.0])
        model = LinearModel(w)
        bg_rows = rng.normal(size=(12, 4))
        bg = background_table(bg_rows)
        x = rng.normal(size=4)
        result = shap_exact(model, x, bg)
        expected = w * (x - bg_rows.mean(axis=0))
        np.testing.assert_allclose(result.values, expected, atol=1e-9)


class TestShapSampled:
    def test_constant_model_zero(self):
        model = make_ensemble([leaf_tree(0.0)], ("a", "b"), base_score=3.0)
        bg = background_table([[0.0, 0.0], [1.0, 1.0]], names=("a", "b"))
        result = shap_sampled(model, np.array([5.0, 5.0]), bg, n_permutations=10, seed=0)
        np.testing.assert_array_equal(result.values, [0.0, 0.0])

    def test_deterministic_single_permutation(self):
        model = LinearModel([1.0, 2.0, 3.0])
        bg = background_table(np.arange(9.0).reshape(3, 3))
        x = np.array([1.0, 1.0, 1.0])
        a = shap_sampled(model, x, bg, n_permutations=1, seed=5)
        b = shap_sampled(model, x, bg, n_permutations=1, seed=5)
        np.testing.assert_array_equal(a.values, b.values)

    def test_efficiency_by_construction(self):
        rng = np.random.default_rng(15)
        model = LinearModel(rng.normal(size=5))
        bg = background_table(rng.normal(size=(7, 5)))
        x = rng.normal(size=5)
        result = shap_sampled(model, x, bg, n_permutations=20, seed=1)
        assert result.total() == pytest.approx(model.predict_row(x), rel=1e-12)
        assert result.distributed_residual is not None

    def test_close_to_exact(self, fitted_model, panel):
        model = fitted_model[0]
        bg = panel.table.subset(np.arange(8))
        x = panel.table.rows[42]
        exact = shap_exact(model, x, bg)
        sampled = shap_sampled(model, x, bg, n_permutations=800, seed=3)
        tol = 0.05 * np.max(np.abs(exact.values))
        np.testing.assert_allclose(sampled.values, exact.values, atol=tol)
