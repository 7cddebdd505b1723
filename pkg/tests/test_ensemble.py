from decimal import Decimal, getcontext

import numpy as np
import pytest

from metaboost.ensemble import (
    Ensemble,
    EnsembleConfig,
    WeightScheme,
    evaluation,
    load_model,
    posterior_over_k,
    train,
    train_baseline_gbdt,
    train_method,
)
from metaboost.leaf_model import NormalGammaParams
from metaboost.metatree import FeatureSchema, MetaTree, MetaTreeNode
from metaboost.synthetic import sample_dataset, sample_true_tree

SCHEMA = FeatureSchema(2, 3)


def toy(seed=0, n=120):
    rng = np.random.default_rng(seed)
    X = np.hstack([rng.normal(size=(n, 2)), rng.integers(0, 2, size=(n, 3))]).astype(float)
    y = 2.0 * (X[:, 0] > 0) - 1.5 * X[:, 3] + rng.normal(0, 0.5, n)
    return X, y


class TestWeightScheme:
    @pytest.mark.parametrize("pair", [("gbdt", "uniform"), ("posterior", "uniform"),
                                      ("uniform", "gbdt"), ("bogus", "bogus")])
    def test_invalid_pairs(self, pair):
        with pytest.raises(ValueError):
            WeightScheme(*pair)

    def test_default_rates(self):
        assert EnsembleConfig(scheme=WeightScheme("gbdt", "gbdt")).lr == 0.1
        assert EnsembleConfig(scheme=WeightScheme("uniform", "posterior")).lr == 1.0


class TestPosteriorOverK:
    def test_three_trees(self):
        getcontext().prec = 50
        e = [Decimal(-10).exp(), Decimal(-12).exp(), Decimal(-14).exp()]
        exact = [float(v / sum(e)) for v in e]
        w = posterior_over_k([-10.0, -12.0, -14.0])
        np.testing.assert_allclose(w, exact, rtol=1e-14)
        np.testing.assert_allclose(w, [0.8668, 0.1173, 0.0159], atol=1e-4)

    def test_weighted_prediction(self):
        w = posterior_over_k([-10.0, -12.0, -14.0])
        assert float(w @ [1.0, 2.0, 3.0]) == pytest.approx(1.1491, abs=1e-3)

    def test_single(self):
        assert posterior_over_k([-123.4]).tolist() == [1.0]

    def test_identical_trees_are_uniform(self):
        X, y = toy()
        trees = []
        for _ in range(4):
            t = MetaTree(MetaTreeNode(), SCHEMA, NormalGammaParams())
            trees.append(t.fit(X, y))
        np.testing.assert_allclose(posterior_over_k(trees), 0.25, atol=1e-12)

    def test_shift_invariance(self):
        rng = np.random.default_rng(0)
        # multiples of 2**-10 so that every shifted value is exactly representable
        log_ml = np.round(rng.normal(-300, 20, size=8) * 1024) / 1024
        base = posterior_over_k(log_ml)
        assert abs(base.sum() - 1.0) <= 1e-12
        for c in (-1000.0, 7.0, 512.0):
            assert np.array_equal(posterior_over_k(log_ml + c), base)
        np.testing.assert_allclose(posterior_over_k(log_ml + 0.123), base, atol=1e-12)

    def test_extreme_values(self):
        w = posterior_over_k([-1e6, -1e6 - 1.0])
        assert np.all(np.isfinite(w)) and w.sum() == pytest.approx(1.0)

    def test_unfitted_rejected(self):
        with pytest.raises(ValueError):
            posterior_over_k([MetaTree(MetaTreeNode(), SCHEMA)])


class TestTrain:
    def test_single_tree_uniform(self):
        X, y = toy()
        cfg = EnsembleConfig(n_trees=1, d_max=3, scheme=WeightScheme("uniform", "uniform"))
        model = train(X, y, cfg, SCHEMA)
        assert model.prediction_weights.tolist() == [1.0]
        assert np.array_equal(model.predict(X), model.trees[0].predict_many(X))

    def test_gbdt_constant_targets(self):
        X, _ = toy()
        y = np.full(len(X), 4.25)
        model = train_method("mt_gbdt", X, y, SCHEMA, n_trees=5, d_max=3)
        assert model.f0 == 4.25
        assert all(t.depth == 0 for t in model.trees)
        # F_0 already fits, so every tree sees zero residuals and predicts zero
        assert all(t.root.stats.sum_y == 0.0 for t in model.trees)
        np.testing.assert_allclose(model.predict(X), 4.25, atol=1e-12)

    def test_gbdt_no_trees(self):
        X, y = toy()
        model = train_method("mt_gbdt", X, y, SCHEMA, n_trees=0)
        np.testing.assert_allclose(model.predict(X), y.mean())

    def test_identical_rows(self):
        X = np.zeros((30, 5))
        y = np.random.default_rng(0).normal(size=30)
        model = train_method("mt_pos_pos", X, y, SCHEMA, n_trees=3, d_max=3)
        assert all(t.depth == 0 for t in model.trees)

    @pytest.mark.parametrize("method", ["mt_gbdt", "mt_uni_uni", "mt_uni_pos", "mt_pos_pos"])
    def test_weights_use_only_earlier_trees(self, method):
        X, y = toy()
        model = train_method(method, X, y, SCHEMA, n_trees=6, d_max=3)
        assert [len(w) for w in model.learning_weights] == list(range(6))
        assert len(model.prediction_weights) == 6
        if method != "mt_gbdt":
            assert model.prediction_weights.min() >= 0
            assert abs(model.prediction_weights.sum() - 1.0) <= 1e-12
            assert model.f0 == 0.0
            assert set(model.targets) == {"raw"}
        else:
            assert np.all(model.prediction_weights == 1.0)
            assert set(model.targets) == {"residual"}

    def test_uniform_identical_trees_equal_single(self):
        X = np.zeros((40, 5))
        y = np.random.default_rng(2).normal(size=40)
        model = train_method("mt_uni_uni", X, y, SCHEMA, n_trees=4)
        np.testing.assert_allclose(model.predict(X[:3]), model.trees[0].predict_many(X[:3]),
                                   atol=1e-12)

    def test_residual_flag(self):
        X, y = toy()
        raw = train_method("mt_uni_uni", X, y, SCHEMA, n_trees=3, d_max=2)
        res = train_method("mt_uni_uni", X, y, SCHEMA, n_trees=3, d_max=2, fit_residuals=True)
        assert set(res.targets) == {"residual"}
        assert raw.trees[0].dumps() == res.trees[0].dumps()
        assert raw.trees[1].root.stats != res.trees[1].root.stats

    def test_learns_signal(self):
        X, y = toy(n=400)
        Xt, yt = toy(seed=1, n=400)
        for method in ("mt_gbdt", "mt_uni_uni", "mt_pos_pos"):
            model = train_method(method, X, y, SCHEMA, n_trees=10, d_max=3)
            assert evaluation(yt, model.predict(Xt)) < 0.5 * evaluation(yt, np.full(400, y.mean()))

    def test_deterministic(self):
        X, y = toy()
        a = train_method("mt_pos_pos", X, y, SCHEMA, n_trees=4, d_max=3)
        b = train_method("mt_pos_pos", X, y, SCHEMA, n_trees=4, d_max=3)
        assert a.dumps() == b.dumps()

    def test_schema_mismatch(self):
        X, y = toy()
        model = train_method("mt_uni_uni", X, y, SCHEMA, n_trees=1)
        with pytest.raises(ValueError):
            model.predict(X[:, :4])

    def test_posterior_prefers_true_structure(self):
        hits = 0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            truth = sample_true_tree(rng, K=10, d_max_star=2, g_star=1.0)
            X, y = sample_dataset(rng, truth, 500)
            model = train_method("mt_pos_pos", X, y, truth.schema, n_trees=20, d_max=2)
            oracle = truth.meta_tree().fit(X, y)
            w = posterior_over_k(model.trees + [oracle])
            hits += w[-1] >= w.max() - 1e-12
        assert hits >= 16


class TestBaseline:
    def test_no_trees(self):
        X, y = toy()
        np.testing.assert_allclose(train_baseline_gbdt(X, y, SCHEMA, n_trees=0).predict(X),
                                   y.mean())

    def test_one_full_step(self):
        X, y = toy()
        model = train_baseline_gbdt(X, y, SCHEMA, n_trees=1, d_max=10, learning_rate=1.0)
        assert evaluation(y, model.predict(X)) / len(y) <= y.var()

    def test_training_error_non_increasing(self):
        X, y = toy(n=200)
        model = train_baseline_gbdt(X, y, SCHEMA, n_trees=30, d_max=3)
        errs = [evaluation(y, p) for p in model.staged_predict(X)]
        assert all(b <= a + 1e-9 for a, b in zip(errs, errs[1:]))

    def test_bad_rate(self):
        X, y = toy()
        with pytest.raises(ValueError):
            train_baseline_gbdt(X, y, SCHEMA, learning_rate=1.5)


class TestSerialization:
    @pytest.mark.parametrize("method", ["mt_gbdt", "mt_pos_pos", "gbdt_baseline"])
    def test_round_trip(self, method):
        X, y = toy()
        model = train_method(method, X, y, SCHEMA, n_trees=5, d_max=3)
        back = load_model(model.dumps())
        assert back.dumps() == model.dumps()
        assert np.array_equal(back.predict(X), model.predict(X))

    def test_unknown_format(self):
        with pytest.raises(ValueError):
            load_model('{"format": "other"}')
        with pytest.raises(ValueError):
            Ensemble.from_dict({"format": "other"})
