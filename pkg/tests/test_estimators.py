import numpy as np
import pytest
from sklearn.base import clone

from _oracles import random_distribution
from dirsep.doa import DirectionField
from dirsep.estimators import DirectionalNMF, DirectionalNTF, SupervisedNMF, check_observation
from dirsep.ntf import DenseDirectionalObservation, SparseDirectionalObservation


def two_band_scene(seed=0, F=16, T=24, D=8):
    """Low band from direction 2, high band from direction 6."""
    rng = np.random.default_rng(seed)
    spec = rng.uniform(0.5, 1.0, (F, T))
    d = np.where(np.arange(F)[:, None] < F // 2, 2, 6) * np.ones((1, T), dtype=int)
    return spec, d, D


class TestCheckObservation:
    def test_sparse_from_array(self):
        spec, d, D = two_band_scene()
        obs = check_observation(spec * 7, d, D)
        assert isinstance(obs, SparseDirectionalObservation)
        assert obs.n_directions == D
        assert obs.p.sum() == pytest.approx(1.0)

    def test_direction_count_inferred(self):
        spec, d, _ = two_band_scene()
        assert check_observation(spec, d).n_directions == 7

    def test_dense(self, rng):
        obs = check_observation(random_distribution(rng, (3, 4, 5)))
        assert isinstance(obs, DenseDirectionalObservation)

    def test_errors(self, rng):
        spec, d, D = two_band_scene()
        with pytest.raises(ValueError, match="per-bin directions"):
            check_observation(spec)
        with pytest.raises(ValueError, match="must be None"):
            check_observation(random_distribution(rng, (3, 4, 5)), d)
        with pytest.raises(ValueError, match="no mass"):
            check_observation(np.zeros((3, 4)), np.zeros((3, 4), dtype=int))
        with pytest.raises(ValueError):
            check_observation(-spec, d)


class TestSklearnApi:
    @pytest.mark.parametrize("cls", [DirectionalNTF, DirectionalNMF, SupervisedNMF])
    def test_params_and_clone(self, cls):
        est = cls(n_iter=7)
        assert est.get_params()["n_iter"] == 7
        twin = clone(est)
        assert twin is not est and twin.get_params() == est.get_params()
        est.set_params(n_iter=3)
        assert est.n_iter == 3

    def test_transform_before_fit(self):
        spec, d, D = two_band_scene()
        with pytest.raises(Exception, match="not fitted"):
            DirectionalNTF().transform(spec, d)

    @pytest.mark.parametrize("kwargs", [{"n_sources": 0}, {"n_components": -1}, {"n_iter": 0},
                                        {"mask_mode": "soft"}])
    def test_bad_params(self, kwargs):
        spec, d, D = two_band_scene()
        with pytest.raises(ValueError):
            DirectionalNTF(**kwargs).fit(spec, d, D)


class TestDirectionalNTF:
    def test_separates_two_bands(self):
        spec, d, D = two_band_scene()
        est = DirectionalNTF(n_sources=2, n_components=2, n_iter=100, random_state=0)
        mask = est.fit_transform(spec, d, D)
        assert mask.shape == (2,) + spec.shape
        np.testing.assert_allclose(mask.sum(axis=0), 1.0, atol=1e-12)
        low = mask[:, :8].mean(axis=(1, 2))
        s = int(np.argmax(low))
        assert mask[s, :8].min() > 0.95 and mask[1 - s, 8:].min() > 0.95
        bins = sorted(np.argmax(est.model_.direction_given_source(), axis=0))
        assert bins == [2, 6]
        assert est.n_iter_ == 100 and len(est.kl_history_) == 100
        assert np.all(np.diff(est.kl_history_) <= 1e-10)

    def test_deterministic(self):
        spec, d, D = two_band_scene(1)
        a = DirectionalNTF(n_components=3, n_iter=30, random_state=5).fit_transform(spec, d, D)
        b = DirectionalNTF(n_components=3, n_iter=30, random_state=5).fit_transform(spec, d, D)
        np.testing.assert_array_equal(a, b)

    def test_direction_field_input(self):
        spec, d, D = two_band_scene()
        field = DirectionField(d, D)
        a = DirectionalNTF(n_iter=10).fit_transform(spec, field)
        b = DirectionalNTF(n_iter=10).fit_transform(spec, d, D)
        np.testing.assert_array_equal(a, b)

    def test_transform_training_data_is_stable(self):
        spec, d, D = two_band_scene()
        est = DirectionalNTF(n_components=2, n_iter=200, random_state=0).fit(spec, d, D)
        np.testing.assert_allclose(est.transform(spec, d), est.mask_, atol=1e-3)

    def test_transform_new_frames(self):
        spec, d, D = two_band_scene()
        est = DirectionalNTF(n_components=2, n_iter=60).fit(spec, d, D)
        new_spec, new_d, _ = two_band_scene(3, T=10)
        mask = est.transform(new_spec, new_d)
        assert mask.shape == (2, 16, 10)
        with pytest.raises(ValueError, match="F="):
            est.transform(new_spec[:5], new_d[:5])

    def test_tolerance(self):
        spec, d, D = two_band_scene()
        est = DirectionalNTF(n_components=2, n_iter=500, tol=1e-6).fit(spec, d, D)
        assert est.n_iter_ < 500

    def test_source_directions(self):
        spec, d, D = two_band_scene()
        est = DirectionalNTF(n_components=2, n_iter=100).fit(spec, d, D)
        summary = est.source_directions()
        assert len(summary) == 2


class TestDirectionalNMF:
    def test_bins_and_mask(self):
        spec, d, D = two_band_scene()
        est = DirectionalNMF(n_iter=50).fit(spec, d, D)
        np.testing.assert_array_equal(est.bins_, [2, 6])
        assert est.n_directions_ == D
        np.testing.assert_allclose(est.mask_.sum(axis=0), 1.0, atol=1e-12)
        assert np.all(np.diff(est.kl_history_) <= 1e-10)

    def test_without_dropping(self):
        spec, d, D = two_band_scene()
        est = DirectionalNMF(n_iter=20, drop_empty=False).fit(spec, d, D)
        np.testing.assert_array_equal(est.bins_, np.arange(D))

    def test_unseen_direction_uses_marginal(self):
        spec, d, D = two_band_scene()
        est = DirectionalNMF(n_iter=20).fit(spec, d, D)
        other = np.full_like(d, 4)
        marginal = DirectionalNMF(n_iter=20, mask_mode="marginal").fit(spec, d, D).mask_
        np.testing.assert_allclose(est.transform(spec, other), marginal, atol=1e-12)

    def test_shape_locked(self):
        spec, d, D = two_band_scene()
        est = DirectionalNMF(n_iter=5).fit(spec, d, D)
        with pytest.raises(ValueError, match="fitted shape"):
            est.transform(spec[:, :5], d[:, :5])

    def test_dense_input(self, rng):
        p = random_distribution(rng, (4, 5, 3))
        est = DirectionalNMF(n_iter=10).fit(p)
        assert est.mask_.shape == (2, 4, 5)


class TestSupervisedNMF:
    def test_fit_transform(self):
        rng = np.random.default_rng(0)
        F, T = 12, 30
        low = np.outer(np.r_[np.ones(6), np.zeros(6)], rng.uniform(0.5, 1, T))
        high = np.outer(np.r_[np.zeros(6), np.ones(6)], rng.uniform(0.5, 1, T))
        est = SupervisedNMF(n_components=2, n_iter=50).fit([low, high])
        assert est.dictionaries_.shape == (F, 2, 2)
        mask = est.transform(low + high)
        assert mask.shape == (2, F, T)
        assert mask[0, :6].min() > 0.99 and mask[1, 6:].min() > 0.99

    def test_requires_training(self):
        with pytest.raises(ValueError):
            SupervisedNMF().fit([])

    def test_not_fitted(self):
        with pytest.raises(Exception, match="not fitted"):
            SupervisedNMF().transform(np.ones((3, 3)))
