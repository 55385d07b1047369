import math

import numpy as np
import pytest

from sacebart.bart import (
    RegressionTree,
    SumOfTreesModel,
    TreePrior,
    backfit_iteration,
    fit_probit_latent,
    predict,
)
from sacebart.errors import ContractViolation
from sacebart.kernels import RngStream, sample_inverse_gamma

from _oracles import traverse_nested


def make_model(X, clusters, y=None, n_trees=20, **kwargs):
    return SumOfTreesModel(X, clusters, n_trees=n_trees,
                           y_for_scale=y, **kwargs)


class TestPredict:
    def test_single_leaf_trees_sum_to_constant(self):
        X = np.zeros((5, 2))
        model = make_model(X, np.zeros(5, dtype=int), y=np.array([0.0, 1.0]),
                           n_trees=4, standardize=False)
        c = 6.0
        trees = [RegressionTree.from_nested(("leaf", c / 4), 5, X)
                 for _ in range(4)]
        model.install_trees(trees)
        assert predict(model, [0.0, 0.0]) == pytest.approx(c)

    def test_known_vs_unknown_cluster_differ_by_intercept(self):
        X = np.zeros((4, 1))
        model = make_model(X, np.array([0, 0, 1, 1]), standardize=False,
                           n_trees=1)
        model.install_trees([RegressionTree.from_nested(("leaf", 1.0), 4, X)],
                            intercepts={0: 2.0, 1: -1.0})
        known = predict(model, [0.0], cluster_id=0)
        unknown = predict(model, [0.0], cluster_id="nope")
        assert known - unknown == pytest.approx(2.0)

    def test_hand_built_ensemble_matches_manual_traversal(self):
        spec1 = ("split", 0, 0.5,
                 ("leaf", 1.0),
                 ("split", 1, -1.0, ("leaf", 2.0), ("leaf", 3.0)))
        spec2 = ("split", 1, 0.0, ("leaf", -4.0), ("leaf", 5.0))
        rng = np.random.default_rng(0)
        X = rng.normal(size=(50, 2))
        model = make_model(X, np.zeros(50, dtype=int), standardize=False,
                           n_trees=2)
        model.install_trees([
            RegressionTree.from_nested(spec1, 50, X),
            RegressionTree.from_nested(spec2, 50, X),
        ])
        for x in [(-1.0, -2.0), (0.2, 1.4), (2.0, -0.5), (0.5, 0.0)]:
            expected = traverse_nested(spec1, x) + traverse_nested(spec2, x)
            assert predict(model, x) == pytest.approx(expected)

    def test_dimension_mismatch_raises(self):
        X = np.zeros((3, 2))
        model = make_model(X, np.zeros(3, dtype=int), standardize=False)
        with pytest.raises(ValueError):
            predict(model, [1.0])

    def test_predict_is_pure(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(30, 3))
        model = make_model(X, np.zeros(30, dtype=int), standardize=False)
        model.backfit(X[:, 0] + 1.0, RngStream(3))
        x = [0.3, -0.2, 0.9]
        first = predict(model, x)
        assert all(predict(model, x) == first for _ in range(5))


class TestBackfit:
    def test_constant_response_recovered(self):
        rng_np = np.random.default_rng(2)
        X = rng_np.normal(size=(100, 2))
        y = np.full(100, 7.7)
        model = make_model(X, np.zeros(100, dtype=int), y=y)
        stream = RngStream(4)
        preds = []
        for sweep in range(60):
            backfit_iteration(model, y, stream)
            if sweep >= 30:
                preds.append(model.predict_rows())
        post_mean = np.mean(preds, axis=0)
        assert np.allclose(post_mean, 7.7, atol=0.2)

    def test_noiseless_step_function_rmse(self):
        # group-means oracle: x1 takes 20 distinct values, so the
        # quantile cutpoint grid separates the step exactly
        rng_np = np.random.default_rng(3)
        n = 500
        levels = np.linspace(-1.0, 1.0, 20)
        x1 = rng_np.choice(levels[np.abs(levels) > 1e-9], size=n)
        x2 = rng_np.normal(size=n)
        X = np.column_stack([x1, x2])
        y = 10.0 * (x1 > 0)
        clusters = rng_np.integers(0, 10, size=n)
        model = make_model(X, clusters, y=y, n_trees=30)
        stream = RngStream(5)
        preds = []
        for sweep in range(180):
            backfit_iteration(model, y, stream)
            if sweep >= 80:
                preds.append(model.predict_rows())
        post_mean = np.mean(preds, axis=0)
        rmse = math.sqrt(np.mean((post_mean - y) ** 2))
        assert rmse <= 0.5

    def test_random_intercept_variance_recovery(self):
        rng_np = np.random.default_rng(4)
        n_clusters, per = 50, 20
        clusters = np.repeat(np.arange(n_clusters), per)
        b_true = rng_np.normal(0.0, 2.0, n_clusters)
        X = rng_np.normal(size=(n_clusters * per, 2))
        y = b_true[clusters] + rng_np.normal(0, 1.0, n_clusters * per)
        model = make_model(X, clusters, y=y, n_trees=20)
        stream = RngStream(6)
        draws = []
        for sweep in range(150):
            backfit_iteration(model, y, stream)
            if sweep >= 50:
                draws.append(model.intercept_var)
        assert 2.0 <= np.mean(draws) <= 8.0

    def test_flat_data_keeps_trees_shallow(self):
        rng_np = np.random.default_rng(5)
        X = rng_np.normal(size=(300, 4))
        y = rng_np.normal(size=300)
        model = make_model(X, np.zeros(300, dtype=int), y=y, n_trees=30)
        stream = RngStream(7)
        depths = []
        for sweep in range(80):
            backfit_iteration(model, y, stream)
            if sweep >= 30:
                depths.append(model.average_tree_depth())
        assert np.mean(depths) < 3.0

    def test_empty_leaf_proposals_never_raise(self):
        # one-point design: every grow proposal would create an empty leaf
        X = np.zeros((8, 1))
        y = np.arange(8.0)
        model = make_model(X, np.zeros(8, dtype=int), y=y, n_trees=5)
        stream = RngStream(8)
        for _ in range(50):
            backfit_iteration(model, y, stream)
        assert all(t.n_leaves == 1 for t in model.trees)

    def test_subset_fit_ignores_other_rows(self):
        rng_np = np.random.default_rng(6)
        X = rng_np.normal(size=(200, 2))
        y_all = np.where(X[:, 0] > 0, 5.0, -5.0)
        model = make_model(X, np.zeros(200, dtype=int), y=y_all, n_trees=10)
        rows = np.nonzero(X[:, 0] > 0)[0]
        stream = RngStream(9)
        for _ in range(40):
            backfit_iteration(model, y_all[rows], stream, rows=rows)
        fit = model.predict_rows(rows)
        assert np.abs(fit - 5.0).mean() < 1.0

    def test_structural_false_freezes_trees(self):
        rng_np = np.random.default_rng(7)
        X = rng_np.normal(size=(60, 2))
        y = X[:, 0]
        model = make_model(X, np.zeros(60, dtype=int), y=y, n_trees=5)
        stream = RngStream(10)
        for _ in range(10):
            backfit_iteration(model, y, stream)
        shapes = [tuple(t.leaf_ids) for t in model.trees]
        for _ in range(10):
            backfit_iteration(model, y, stream, structural=False)
        assert [tuple(t.leaf_ids) for t in model.trees] == shapes


class TestProbitRole:
    def test_variance_pinned_to_one(self):
        rng_np = np.random.default_rng(8)
        X = rng_np.normal(size=(100, 2))
        latent = rng_np.normal(size=100)
        model = make_model(X, np.zeros(100, dtype=int), standardize=False,
                           fixed_resid_var=1.0, n_trees=10)
        stream = RngStream(11)
        for _ in range(25):
            fit_probit_latent(model, latent, stream)
            assert model.resid_var == 1.0

    def test_constant_positive_latent_pushes_cdf_to_one(self):
        from sacebart.kernels import normal_cdf
        rng_np = np.random.default_rng(9)
        X = rng_np.normal(size=(150, 2))
        latent = np.full(150, 3.0)
        model = make_model(X, np.zeros(150, dtype=int), standardize=False,
                           fixed_resid_var=1.0, n_trees=20)
        stream = RngStream(12)
        for _ in range(60):
            fit_probit_latent(model, latent, stream)
        assert normal_cdf(model.predict_rows()).mean() > 0.95

    def test_latent_signal_recovered(self):
        rng_np = np.random.default_rng(10)
        n = 400
        X = rng_np.normal(size=(n, 3))
        latent = X[:, 0] + rng_np.normal(size=n)
        model = make_model(X, np.zeros(n, dtype=int), standardize=False,
                           fixed_resid_var=1.0, n_trees=30)
        stream = RngStream(13)
        fits = []
        for sweep in range(100):
            fit_probit_latent(model, latent, stream)
            if sweep >= 50:
                fits.append(model.predict_rows())
        fit = np.mean(fits, axis=0)
        r = np.corrcoef(fit, X[:, 0])[0, 1]
        assert r > 0.5

    def test_wrong_model_type_rejected(self):
        X = np.zeros((10, 1))
        model = make_model(X, np.zeros(10, dtype=int), y=np.arange(10.0))
        with pytest.raises(ContractViolation):
            fit_probit_latent(model, np.zeros(10), RngStream(14))


class TestFullConditionals:
    def test_leaf_draws_reduce_to_sample_mean_with_flat_prior(self):
        X = np.zeros((400, 1))
        y = np.concatenate([np.full(200, 2.0), np.full(200, 4.0)])
        y = y + np.random.default_rng(11).normal(0, 0.01, 400)
        model = make_model(X, np.zeros(400, dtype=int), y=y, n_trees=1,
                           standardize=False, leaf_prior_sd=1e6)
        stream = RngStream(15)
        draws = []
        for _ in range(300):
            backfit_iteration(model, y, stream, structural=False)
            draws.append(model.predict_rows()[0])
        # flat leaf prior, single-leaf tree: posterior centers on ybar
        assert np.mean(draws) == pytest.approx(y.mean(), abs=0.05)

    def test_sigma2_full_conditional_moments(self):
        # frozen residuals: sigma^2 | r ~ InvGamma(a0 + n/2, b0 + SSR/2)
        rng_np = np.random.default_rng(12)
        resid = rng_np.normal(0, 1.5, 500)
        a0 = b0 = 1e-3
        shape = a0 + resid.size / 2
        rate = b0 + float(resid @ resid) / 2
        stream = RngStream(16)
        draws = sample_inverse_gamma(shape, rate, stream, size=200_000)
        expected_mean = rate / (shape - 1)
        assert draws.mean() == pytest.approx(expected_mean, rel=0.02)

    def test_tree_prior_split_probability(self):
        prior = TreePrior()
        assert prior.split_prob(0) == pytest.approx(0.95)
        assert prior.split_prob(1) == pytest.approx(0.95 / 4)
        assert prior.split_prob(2) == pytest.approx(0.95 / 9)

    def test_tree_prior_validation(self):
        with pytest.raises(ValueError):
            TreePrior(alpha=1.5)
        with pytest.raises(ValueError):
            TreePrior(grow_prob=0.5, prune_prob=0.5, change_prob=0.5)


class TestDeterminism:
    def test_backfit_is_reproducible(self):
        rng_np = np.random.default_rng(13)
        X = rng_np.normal(size=(120, 2))
        y = X[:, 0] + rng_np.normal(size=120)

        def run():
            model = make_model(X, np.zeros(120, dtype=int), y=y, n_trees=10)
            stream = RngStream(99)
            for _ in range(20):
                backfit_iteration(model, y, stream)
            return model.predict_rows()

        assert np.array_equal(run(), run())
