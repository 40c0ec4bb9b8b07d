import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import nmf_step, random_distribution, supervised_step
from dirsep.nmf import (
    NmfModel,
    SupervisedModel,
    kl_divergence,
    nmf_fit,
    nmf_fit_dictionary,
    nmf_init,
    nmf_update,
    supervised_init,
    supervised_nmf_fit,
    supervised_update,
)


def assert_nmf_invariants(model, atol=1e-9):
    assert np.all(model.dictionary >= 0) and np.all(model.activations >= 0)
    np.testing.assert_allclose(model.dictionary.sum(axis=0), 1.0, atol=atol)
    assert abs(model.activations.sum() - 1.0) <= atol


class TestInit:
    def test_deterministic(self):
        a, b = nmf_init(5, 7, 3, seed=11), nmf_init(5, 7, 3, seed=11)
        np.testing.assert_array_equal(a.dictionary, b.dictionary)
        np.testing.assert_array_equal(a.activations, b.activations)

    def test_single_component(self):
        m = nmf_init(4, 6, 1, seed=0)
        assert m.dictionary.shape == (4, 1) and m.activations.shape == (6, 1)
        assert_nmf_invariants(m)

    def test_positive_over_seeds(self):
        for seed in range(100):
            m = nmf_init(6, 5, 3, seed)
            assert m.dictionary.min() > 0 and m.activations.min() > 0
            assert_nmf_invariants(m)

    @pytest.mark.parametrize("dims", [(0, 3, 2), (3, 0, 2), (3, 3, 0)])
    def test_zero_dimension(self, dims):
        with pytest.raises(ValueError):
            nmf_init(*dims)


class TestKl:
    def test_identity(self, rng):
        p = random_distribution(rng, (4, 5))
        assert kl_divergence(p, p) == 0.0

    def test_hand_example(self):
        value = kl_divergence(np.array([[0.5], [0.5]]), np.array([[0.25], [0.75]]))
        expected = 0.5 * math.log(2) + 0.5 * math.log(2 / 3)
        assert value == pytest.approx(expected, abs=1e-15)
        assert value == pytest.approx(0.1438, abs=5e-5)

    def test_zero_model_mass_is_infinite(self):
        assert kl_divergence(np.array([0.5, 0.5]), np.array([1.0, 0.0])) == math.inf

    def test_zero_observation_terms_vanish(self):
        assert kl_divergence(np.array([1.0, 0.0]), np.array([0.5, 0.5])) == pytest.approx(math.log(2))

    @given(seed=st.integers(0, 2**31 - 1))
    @settings(max_examples=50, deadline=None)
    def test_gibbs(self, seed):
        rng = np.random.default_rng(seed)
        p = random_distribution(rng, (3, 4), zero_fraction=0.3)
        q = random_distribution(rng, (3, 4))
        assert kl_divergence(p, q) >= 0.0


class TestUpdate:
    def test_brute_force_3x4(self, rng):
        p = random_distribution(rng, (3, 4))
        m0 = nmf_init(3, 4, 2, seed=3)
        m1 = nmf_update(p, m0)
        W1, H1 = nmf_step(p, m0.dictionary, m0.activations)
        np.testing.assert_allclose(m1.dictionary, W1, rtol=0, atol=1e-12)
        np.testing.assert_allclose(m1.activations, H1, rtol=0, atol=1e-12)

    @given(seed=st.integers(0, 2**31 - 1), F=st.integers(1, 5), T=st.integers(1, 5),
           Z=st.integers(1, 3), sparsity=st.sampled_from([0.0, 0.4]))
    @settings(max_examples=60, deadline=None)
    def test_brute_force_random(self, seed, F, T, Z, sparsity):
        rng = np.random.default_rng(seed)
        p = random_distribution(rng, (F, T), sparsity)
        m0 = nmf_init(F, T, Z, seed)
        m1 = nmf_update(p, m0)
        W1, H1 = nmf_step(p, m0.dictionary, m0.activations)
        np.testing.assert_allclose(m1.dictionary, W1, rtol=0, atol=1e-12)
        np.testing.assert_allclose(m1.activations, H1, rtol=0, atol=1e-12)
        assert_nmf_invariants(m1)

    def test_fixed_point(self):
        m0 = nmf_init(6, 8, 3, seed=2)
        m1 = nmf_update(m0.marginal(), m0)
        np.testing.assert_allclose(m1.dictionary, m0.dictionary, atol=1e-12)
        np.testing.assert_allclose(m1.activations, m0.activations, atol=1e-12)

    def test_monotone(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            p = random_distribution(rng, (12, 15), 0.2)
            _, history = nmf_fit(p, 4, n_iter=50, seed=seed)
            assert np.all(np.diff(history) <= 1e-10)

    def test_tolerance_stops_early(self, rng):
        p = random_distribution(rng, (10, 10))
        _, history = nmf_fit(p, 2, n_iter=500, seed=0, tol=1e-6)
        assert len(history) < 500

    def test_zero_iterations_rejected(self, rng):
        with pytest.raises(ValueError):
            nmf_fit(random_distribution(rng, (3, 3)), 2, n_iter=0)

    def test_large_instance_within_memory_budget(self):
        import tracemalloc

        rng = np.random.default_rng(0)
        F, T, Z = 300, 400, 40
        p = random_distribution(rng, (F, T))
        m0 = nmf_init(F, T, Z, seed=0)
        io_bytes = p.nbytes + 2 * (m0.dictionary.nbytes + m0.activations.nbytes)
        tracemalloc.start()
        nmf_update(p, m0)
        _, peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()
        assert peak <= 10 * io_bytes
        assert peak < F * T * Z * 8 / 4  # far below one F x T x Z array


class TestDictionary:
    def test_rank_one_profile_recovered(self, rng):
        spectrum = rng.uniform(0.1, 1.0, 16)
        spectrum /= spectrum.sum()
        envelope = rng.uniform(0.1, 1.0, 30)
        p = np.outer(spectrum, envelope / envelope.sum())
        W = nmf_fit_dictionary(p, 1, n_iter=100, seed=4)
        np.testing.assert_allclose(W[:, 0], spectrum, atol=1e-6)

    def test_zero_iterations_rejected(self, rng):
        with pytest.raises(ValueError):
            nmf_fit_dictionary(random_distribution(rng, (4, 4)), 2, n_iter=0)

    def test_deterministic(self, rng):
        p = random_distribution(rng, (8, 9))
        np.testing.assert_array_equal(nmf_fit_dictionary(p, 3, 20, 5),
                                      nmf_fit_dictionary(p, 3, 20, 5))


class TestSupervised:
    def test_brute_force(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            F, T, Z, S = rng.integers(1, 5, 4)
            dicts = [random_distribution(rng, (F, Z)) * Z for _ in range(S)]
            dicts = [d / d.sum(axis=0) for d in dicts]
            m0 = supervised_init(dicts, T, seed)
            m0 = SupervisedModel(m0.dictionaries, random_distribution(rng, S), m0.activations)
            p = random_distribution(rng, (F, T), 0.3)
            m1 = supervised_update(p, m0)
            w1, H1 = supervised_step(p, m0.dictionaries, m0.weights, m0.activations)
            np.testing.assert_allclose(m1.weights, w1, atol=1e-12)
            np.testing.assert_allclose(m1.activations, H1, atol=1e-12)
            np.testing.assert_array_equal(m1.dictionaries, m0.dictionaries)

    def test_disjoint_support(self):
        F, T = 10, 12
        a = np.r_[np.ones(5), np.zeros(5)] / 5
        b = np.r_[np.zeros(5), np.ones(5)] / 5
        rng = np.random.default_rng(0)
        p = np.outer(a, rng.uniform(0.5, 1, T)) + np.outer(b, rng.uniform(0.5, 1, T))
        p /= p.sum()
        _, mask = supervised_nmf_fit(p, [a[:, None], b[:, None]], n_iter=50, seed=0)
        assert mask[0, :5].min() >= 0.99 and mask[1, 5:].min() >= 0.99

    def test_single_source_mask_is_one(self, rng):
        p = random_distribution(rng, (6, 7))
        W = random_distribution(rng, (6, 3))
        _, mask = supervised_nmf_fit(p, [W / W.sum(axis=0)], n_iter=10)
        np.testing.assert_array_equal(mask, 1.0)

    def test_monotone_and_mask_normalized(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            dicts = [random_distribution(rng, (9, 3)) for _ in range(2)]
            dicts = [d / d.sum(axis=0) for d in dicts]
            p = random_distribution(rng, (9, 11), 0.2)
            _, mask, history = supervised_nmf_fit(p, dicts, n_iter=50, seed=seed,
                                                  return_history=True)
            assert np.all(np.diff(history) <= 1e-10)
            np.testing.assert_allclose(mask.sum(axis=0), 1.0, atol=1e-12)

    def test_dictionary_mismatch(self, rng):
        with pytest.raises(ValueError, match="disagree on F"):
            supervised_nmf_fit(random_distribution(rng, (5, 4)),
                               [np.ones((5, 2)) / 5, np.ones((6, 2)) / 6])


class TestSerialization:
    def test_nmf_round_trip(self):
        m = nmf_init(4, 5, 2, seed=1)
        back = NmfModel.from_dict(json.loads(json.dumps(m.to_dict())))
        np.testing.assert_allclose(back.dictionary, m.dictionary, rtol=1e-12)
        np.testing.assert_allclose(back.activations, m.activations, rtol=1e-12)

    def test_supervised_round_trip(self, rng):
        dicts = [np.full((4, 2), 0.25)] * 3
        m = supervised_init(dicts, 5, seed=0)
        back = SupervisedModel.from_dict(json.loads(json.dumps(m.to_dict())))
        np.testing.assert_allclose(back.activations, m.activations, rtol=1e-12)
        np.testing.assert_allclose(back.weights, m.weights, rtol=1e-12)
