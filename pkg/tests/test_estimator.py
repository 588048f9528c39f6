import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ordinal_intensity.estimator import OrdinalIntensityModel
from ordinal_intensity.model import generate


@pytest.fixture(scope="module")
def fitted(separated_params):
    rng = np.random.default_rng(31)
    data, labels = generate(separated_params, 600, rng)
    est = OrdinalIntensityModel(
        n_classes=3, draws=150, warmup=120, chains=1, seed=8
    ).fit(data.to_tuples())
    return est, data, labels


class TestSklearnSurface:
    def test_get_params_roundtrip(self):
        est = OrdinalIntensityModel(n_classes=4, draws=10)
        params = est.get_params()
        assert params["n_classes"] == 4 and params["draws"] == 10
        est.set_params(seed=7)
        assert est.get_params()["seed"] == 7

    def test_clone(self):
        est = OrdinalIntensityModel(n_classes=3, seed=5)
        twin = clone(est)
        assert twin.get_params() == est.get_params()

    def test_unfitted_raises(self):
        with pytest.raises(NotFittedError):
            OrdinalIntensityModel().predict([])

    def test_bad_hyper_rejected_at_fit(self, separated_params):
        rng = np.random.default_rng(0)
        data, _ = generate(separated_params, 20, rng)
        with pytest.raises(ValueError):
            OrdinalIntensityModel(n_classes=0).fit(data)


class TestFittedBehaviour:
    def test_predict_range_and_shapes(self, fitted):
        est, data, _ = fitted
        mean = est.predict(data)
        mode = est.predict_class(data)
        proba = est.predict_proba(data)
        assert mean.shape == (600,) and proba.shape == (600, 3)
        assert np.all((mean >= 1.0) & (mean <= 3.0))
        assert set(np.unique(mode)) <= {1, 2, 3}
        np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-9)

    def test_modal_class_tracks_labels(self, fitted):
        est, data, labels = fitted
        accuracy = np.mean((est.predict_class(data) - 1) == labels)
        assert accuracy >= 0.85

    def test_score_is_mean_log_predictive(self, fitted, separated_params):
        est, data, _ = fitted
        rng = np.random.default_rng(32)
        fresh, _ = generate(separated_params, 200, rng)
        value = est.score(fresh.to_tuples())
        assert np.isfinite(value)
        # log density of a tuple with a density term should be plausible
        assert -20.0 < value < 5.0

    def test_accepts_arrays_and_tuples(self, fitted):
        est, data, _ = fitted
        np.testing.assert_allclose(est.predict(data), est.predict(data.to_tuples()))

    def test_fit_does_not_mutate_params(self, fitted):
        est, _, _ = fitted
        assert est.draws == 150 and est.n_classes == 3
