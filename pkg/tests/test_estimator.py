"""Scikit-learn facade: conventions, fitting, prediction."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from deepsom import ConfigurationError, DeepSomClassifier

from toys import halves_dataset, toy_specs


def flat_halves(seed, n):
    rng = np.random.default_rng(seed)
    images, labels = halves_dataset(rng, n)
    return images.reshape(n, -1), labels


class TestConventions:
    def test_get_set_params_round_trip(self):
        est = DeepSomClassifier(som_rows=4, som_cols=4, r=0.5)
        params = est.get_params()
        assert params["som_rows"] == 4
        assert params["r"] == 0.5
        other = DeepSomClassifier().set_params(**params)
        assert other.get_params() == params

    def test_clone(self):
        est = DeepSomClassifier(seed=7, ap_passes=1)
        twin = clone(est)
        assert twin.get_params() == est.get_params()

    def test_predict_before_fit(self):
        with pytest.raises(NotFittedError):
            DeepSomClassifier().predict(np.zeros((2, 64)))

    def test_non_square_features_need_image_shape(self):
        X = np.zeros((20, 48))
        y = np.array([0, 1] * 10)
        with pytest.raises(ConfigurationError, match="square"):
            DeepSomClassifier(pretrain_iterations=0, ap_passes=0).fit(X, y)

    def test_image_shape_must_match_features(self):
        X = np.zeros((20, 64))
        y = np.array([0, 1] * 10)
        est = DeepSomClassifier(image_shape=(4, 4))
        with pytest.raises(ConfigurationError, match="image_shape"):
            est.fit(X, y)

    def test_too_many_classes_for_map(self):
        X, _ = flat_halves(0, 30)
        y = np.arange(30)  # 30 distinct labels
        est = DeepSomClassifier(som_rows=2, som_cols=2, pretrain_iterations=0)
        with pytest.raises(ConfigurationError, match="exceed"):
            est.fit(X, y)


class TestFitPredict:
    def test_separable_problem_learned(self):
        X, y = flat_halves(1, 80)
        est = DeepSomClassifier(
            som_rows=3, som_cols=3, seed=2, pretrain_iterations=200, ap_passes=3
        )
        est.fit(X, y)
        assert est.score(X, y) >= 0.9
        Xt, yt = flat_halves(9, 40)
        assert est.score(Xt, yt) >= 0.9

    def test_classes_preserved_as_given(self):
        X, y01 = flat_halves(3, 60)
        y = np.where(y01 == 0, 5, 9)  # arbitrary label values
        est = DeepSomClassifier(som_rows=3, som_cols=3, seed=2, pretrain_iterations=100, ap_passes=2)
        est.fit(X, y)
        assert est.classes_.tolist() == [5, 9]
        assert set(est.predict(X)) <= {5, 9}

    def test_predict_never_returns_unassigned(self):
        X, y = flat_halves(4, 60)
        est = DeepSomClassifier(som_rows=4, som_cols=4, seed=0, pretrain_iterations=100, ap_passes=1)
        est.fit(X, y)
        rng = np.random.default_rng(0)
        noise = rng.uniform(0, 1, size=(50, 64))
        preds = est.predict(noise)
        assert np.isin(preds, est.classes_).all()

    def test_deterministic_given_seed(self):
        X, y = flat_halves(5, 50)
        a = DeepSomClassifier(som_rows=3, som_cols=3, seed=11, pretrain_iterations=80, ap_passes=1).fit(X, y)
        b = DeepSomClassifier(som_rows=3, som_cols=3, seed=11, pretrain_iterations=80, ap_passes=1).fit(X, y)
        np.testing.assert_array_equal(a.predict(X), b.predict(X))
        for wa, wb in zip(a.network_.layer_weights, b.network_.layer_weights):
            np.testing.assert_array_equal(wa, wb)

    def test_feature_count_checked_at_predict(self):
        X, y = flat_halves(6, 40)
        est = DeepSomClassifier(som_rows=3, som_cols=3, pretrain_iterations=50, ap_passes=1).fit(X, y)
        with pytest.raises(ConfigurationError, match="features"):
            est.predict(np.zeros((3, 49)))

    def test_deep_specs_accepted(self):
        X, y = flat_halves(7, 60)
        est = DeepSomClassifier(
            specs=toy_specs(), seed=3, pretrain_iterations=150, ap_passes=6
        )
        est.fit(X, y)
        assert est.network_.n_layers == 2
        assert est.score(X, y) >= 0.8


class TestTransform:
    def test_last_layer_responses(self):
        X, y = flat_halves(8, 40)
        est = DeepSomClassifier(som_rows=3, som_cols=3, seed=1, pretrain_iterations=60, ap_passes=1)
        est.fit(X, y)
        features = est.transform(X)
        assert features.shape == (40, 9)
        assert (features >= 0.0).all() and (features <= 1.0).all()
        # winners-share-all: the winner emits exactly 1
        assert np.all(features.max(axis=1) == 1.0)
